#include "hyperfuse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"

namespace hyperfuse {

namespace {

using nlohmann::json;

template <typename U>
void put_le(std::string& out, U bits) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

}  // namespace

template <typename T>
std::string encode_checkpoint(const ModelParams<T>& params) {
  json header = json::array();
  std::string payload;
  for (const auto& [name, t] : params) {
    header.push_back({{"name", name}, {"dtype", dtype_name<T>()}, {"shape", t.shape()}, {"byte_offset", payload.size()}});
    for (T v : t.data()) {
      if constexpr (sizeof(T) == 4)
        put_le(payload, std::bit_cast<std::uint32_t>(v));
      else
        put_le(payload, std::bit_cast<std::uint64_t>(v));
    }
  }
  std::string head = header.dump();
  std::string out(kCheckpointMagic, 8);
  put_le(out, static_cast<std::uint64_t>(head.size()));
  out += head;
  out += payload;
  return out;
}

template <typename T>
ModelParams<T> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || bytes.compare(0, 8, kCheckpointMagic) != 0)
    throw CheckpointError("not a checkpoint: bad magic");
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  std::uint64_t head_len = get_le<std::uint64_t>(raw + 8);
  if (head_len > bytes.size() - 16) throw CheckpointError("checkpoint header length exceeds file size");
  json header;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(head_len));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (!header.is_array()) throw CheckpointError("checkpoint header must be a JSON array");
  const unsigned char* payload = raw + 16 + head_len;
  std::size_t payload_len = bytes.size() - 16 - head_len;

  ModelParams<T> params;
  for (const auto& entry : header) {
    std::string name = entry.at("name").get<std::string>();
    std::string dtype = entry.at("dtype").get<std::string>();
    Shape shape = entry.at("shape").get<Shape>();
    std::size_t offset = entry.at("byte_offset").get<std::size_t>();
    std::size_t width = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
    if (width == 0) throw CheckpointError("unsupported dtype '" + dtype + "' for " + name);
    std::size_t n = shape_numel(shape);
    if (offset + n * width > payload_len) throw CheckpointError("payload of " + name + " runs past end of file");
    Tensor<T> t(shape);
    for (std::size_t i = 0; i < n; ++i) {
      const unsigned char* p = payload + offset + i * width;
      t[i] = width == 4 ? static_cast<T>(std::bit_cast<float>(get_le<std::uint32_t>(p)))
                        : static_cast<T>(std::bit_cast<double>(get_le<std::uint64_t>(p)));
    }
    params.add(name, std::move(t));
  }
  return params;
}

template <typename T>
void save_checkpoint(const ModelParams<T>& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  std::string bytes = encode_checkpoint(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing " + path.string());
}

template <typename T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint<T>(bytes);
}

template std::string encode_checkpoint(const ModelParams<float>&);
template std::string encode_checkpoint(const ModelParams<double>&);
template ModelParams<float> decode_checkpoint(const std::string&);
template ModelParams<double> decode_checkpoint(const std::string&);
template void save_checkpoint(const ModelParams<float>&, const std::filesystem::path&);
template void save_checkpoint(const ModelParams<double>&, const std::filesystem::path&);
template ModelParams<float> load_checkpoint(const std::filesystem::path&);
template ModelParams<double> load_checkpoint(const std::filesystem::path&);

}  // namespace hyperfuse
