#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cornerdet/tensor.hpp"

namespace cornerdet {

// Binary PPM (P6, 8-bit). Values are clamped to [0,1] and rounded on write.
inline void write_ppm(const std::string& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw std::invalid_argument("write_ppm: image must be [3,H,W], got " + image.shape_str());
  }
  const int H = image.dim(1), W = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot open '" + path + "'");
  out << "P6\n" << W << " " << H << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(W) * 3);
  const int64_t plane = static_cast<int64_t>(H) * W;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image[c * plane + static_cast<int64_t>(y) * W + x], 0.f, 1.f);
        row[static_cast<size_t>(x) * 3 + static_cast<size_t>(c)] =
            static_cast<unsigned char>(std::lround(v * 255.f));
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw std::runtime_error("write_ppm: short write to '" + path + "'");
}

inline Tensor<float> read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_ppm: cannot open '" + path + "'");
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: '" + path + "' is not a binary PPM");
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w <= 0 || h <= 0 || maxval != 255) {
    throw std::runtime_error("read_ppm: unsupported header in '" + path + "'");
  }
  in.get();  // single whitespace after the header
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw std::runtime_error("read_ppm: truncated pixel data in '" + path + "'");
  }
  Tensor<float> image({3, h, w});
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        image[c * plane + static_cast<int64_t>(y) * w + x] =
            static_cast<float>(raw[(static_cast<size_t>(y) * w + x) * 3 + static_cast<size_t>(c)]) / 255.f;
      }
    }
  }
  return image;
}

}  // namespace cornerdet
