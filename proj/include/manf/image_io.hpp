#pragma once

#include <cctype>
#include <filesystem>

#include "manf/byte_io.hpp"
#include "manf/tensor.hpp"

namespace manf {

/// Binary PPM (P6, maxval 255) as a (1, 3, H, W) tensor in [0, 1].
inline Tensor<float> decode_ppm(const Bytes& b) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < b.size()) {
      if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(b[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    if (pos >= b.size() || !std::isdigit(b[pos])) throw FormatError(std::string("PPM: malformed ") + what);
    unsigned long v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
      v = v * 10 + (b[pos++] - '0');
      if (v > (1ul << 24)) throw FormatError(std::string("PPM: ") + what + " too large");
    }
    return v;
  };
  if (b.size() < 2 || b[0] != 'P' || b[1] != '6') throw FormatError("PPM: not a binary P6 file");
  pos = 2;
  const std::size_t w = number("width"), h = number("height"), maxval = number("maxval");
  if (w == 0 || h == 0) throw FormatError("PPM: zero extent");
  if (maxval != 255) throw FormatError("PPM: maxval " + std::to_string(maxval) + " unsupported (only 255)");
  if (pos >= b.size() || !std::isspace(b[pos])) throw FormatError("PPM: malformed header");
  ++pos;
  if (b.size() - pos < w * h * 3) throw FormatError("PPM: truncated pixel data");
  Tensor<float> t(Shape{1, 3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) t.at(0, c, y, x) = float(b[pos + (y * w + x) * 3 + c]) / 255.0f;
  return t;
}

inline Bytes encode_ppm(const Tensor<float>& t) {
  const Shape s = t.shape();
  require_shape(s.n() == 1 && s.c() == 3, "encode_ppm expects (1,3,H,W), got " + s.str());
  std::string head = "P6\n" + std::to_string(s.w()) + " " + std::to_string(s.h()) + "\n255\n";
  Bytes b(head.begin(), head.end());
  b.reserve(b.size() + s.plane() * 3);
  for (std::size_t y = 0; y < s.h(); ++y)
    for (std::size_t x = 0; x < s.w(); ++x)
      for (std::size_t c = 0; c < 3; ++c)
        b.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(t.at(0, c, y, x), 0.0f, 1.0f) * 255.0f)));
  return b;
}

inline Tensor<float> load_ppm(const std::filesystem::path& p) { return decode_ppm(read_file(p)); }
inline void save_ppm(const std::filesystem::path& p, const Tensor<float>& t) { write_file_atomic(p, encode_ppm(t)); }

}  // namespace manf
