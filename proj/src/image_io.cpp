#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "hyperfuse/data.hpp"

namespace hyperfuse {

namespace {

bool is_png(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png";
}

Tensor<float> from_interleaved(const std::vector<unsigned char>& rgb, std::size_t h, std::size_t w) {
  Tensor<float> t(Shape{3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) t.at(c, y, x) = rgb[(y * w + x) * 3 + c] / 255.0f;
  return t;
}

std::vector<unsigned char> to_interleaved(const Tensor<float>& t) {
  if (t.rank() != 3 || t.dim(0) != 3) throw DataError("write_image: expected [3,H,W], got " + shape_str(t.shape()));
  const std::size_t h = t.dim(1), w = t.dim(2);
  std::vector<unsigned char> rgb(h * w * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        rgb[(y * w + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(std::clamp(t.at(c, y, x), 0.0f, 1.0f) * 255.0f));
  return rgb;
}

// Skips whitespace and '#' comments between PPM header tokens.
std::size_t ppm_token(std::istream& in, const std::filesystem::path& path) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  std::size_t v = 0;
  if (!(in >> v)) throw DataError("malformed PPM header in " + path.string());
  return v;
}

}  // namespace

Tensor<float> read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("image not found: " + path.string());
  if (is_png(path)) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str()))
      throw DataError("cannot read PNG " + path.string() + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
      png_image_free(&img);
      throw DataError("cannot decode PNG " + path.string() + ": " + img.message);
    }
    return from_interleaved(buf, img.height, img.width);
  }
  std::ifstream in(path, std::ios::binary);
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6") throw DataError("not a binary PPM (P6): " + path.string());
  const std::size_t w = ppm_token(in, path), h = ppm_token(in, path), maxval = ppm_token(in, path);
  if (maxval != 255) throw DataError("only 8-bit PPM is supported: " + path.string());
  in.get();
  std::vector<unsigned char> buf(w * h * 3);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw DataError("truncated PPM: " + path.string());
  return from_interleaved(buf, h, w);
}

void write_image(const std::filesystem::path& path, const Tensor<float>& image) {
  const auto rgb = to_interleaved(image);
  const std::size_t h = image.dim(1), w = image.dim(2);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (is_png(path)) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(w);
    img.height = static_cast<png_uint_32>(h);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, rgb.data(), 0, nullptr))
      throw DataError("cannot write PNG " + path.string() + ": " + img.message);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "P6\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

}  // namespace hyperfuse
