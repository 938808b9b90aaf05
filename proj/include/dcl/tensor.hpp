#pragma once

#include <cstddef>
#include <vector>

namespace dcl {

// (C, D, H, W) tensor of doubles, x-fastest within each channel.
struct Tensor4 {
  int c = 0, d = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor4() = default;
  Tensor4(int c_, int d_, int h_, int w_)
      : c(c_), d(d_), h(h_), w(w_),
        v(static_cast<std::size_t>(c_) * d_ * h_ * w_, 0.0) {}

  std::size_t size() const { return v.size(); }
  std::size_t spatial() const {
    return static_cast<std::size_t>(d) * h * w;
  }
  std::size_t index(int ci, int z, int y, int x) const {
    return ((static_cast<std::size_t>(ci) * d + z) * h + y) * w + x;
  }
  double at(int ci, int z, int y, int x) const { return v[index(ci, z, y, x)]; }
  double& at(int ci, int z, int y, int x) { return v[index(ci, z, y, x)]; }

  double* channel(int ci) { return v.data() + static_cast<std::size_t>(ci) * spatial(); }
  const double* channel(int ci) const {
    return v.data() + static_cast<std::size_t>(ci) * spatial();
  }

  bool same_shape(const Tensor4& o) const {
    return c == o.c && d == o.d && h == o.h && w == o.w;
  }
};

}  // namespace dcl
