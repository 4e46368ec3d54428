#pragma once

#include <string>
#include <vector>

#include "spats/common.hpp"

namespace spats {

// Row-major interleaved float image, values nominally in [0,1] for color
// data. Flow fields and logit dumps reuse the same container with other
// ranges.
struct Image {
  int h = 0, w = 0, c = 0;
  std::vector<float> v;

  Image() = default;
  Image(int h_, int w_, int c_, float fill = 0.f)
      : h(h_), w(w_), c(c_), v(size_t(h_) * w_ * c_, fill) {}

  float& at(int i, int j, int ch) { return v[(size_t(i) * w + j) * c + ch]; }
  float at(int i, int j, int ch) const {
    return v[(size_t(i) * w + j) * c + ch];
  }
  size_t size() const { return v.size(); }
  bool same_shape(const Image& o) const {
    return h == o.h && w == o.w && c == o.c;
  }
};

// 8-bit PNG. Grayscale files load as c=1, color as c=3 (alpha dropped).
// Writing quantizes with round-half-away-from-zero on 255*v and clamps to
// [0,255]; c must be 1 or 3.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

// NPY v1.0 container, dtype <f4, C order, shape (h, w, c). Exact float
// round-trip for tests and canonical-space dumps.
void write_npy(const std::string& path, const Image& img);
Image read_npy(const std::string& path);

uint8_t quantize8(float v);

}  // namespace spats
