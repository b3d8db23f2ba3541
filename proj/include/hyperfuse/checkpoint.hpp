#pragma once

#include <filesystem>
#include <string>

#include "hyperfuse/params.hpp"

namespace hyperfuse {

// Checkpoint layout:
//   "HGCKPT1\n"
//   u64 little-endian header length
//   UTF-8 JSON array of {"name", "dtype": "f32"|"f64", "shape", "byte_offset"}
//   little-endian payloads in header order; byte_offset counts from the
//   first payload byte.
inline constexpr char kCheckpointMagic[] = "HGCKPT1\n";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
std::string encode_checkpoint(const ModelParams<T>& params);
// Payloads stored with the other dtype are converted.
template <typename T>
ModelParams<T> decode_checkpoint(const std::string& bytes);

template <typename T>
void save_checkpoint(const ModelParams<T>& params, const std::filesystem::path& path);
template <typename T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace hyperfuse
