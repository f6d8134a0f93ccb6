#pragma once

#include <cmath>
#include <vector>

#include "fusenas/common.hpp"

namespace fusenas {

// Planar RGB image, values in [0,1] once finalized.
struct Image {
  int h = 0;
  int w = 0;
  std::vector<float> v;  // 3*h*w, channel-major

  Image() = default;
  Image(int h_, int w_) : h(h_), w(w_), v(std::size_t(3) * h_ * w_, 0.f) {}

  float& at(int c, int y, int x) {
    return v[(std::size_t(c) * h + y) * w + x];
  }
  float at(int c, int y, int x) const {
    return v[(std::size_t(c) * h + y) * w + x];
  }
  std::int64_t numel() const { return std::int64_t(3) * h * w; }

  void clip01() {
    for (auto& x : v) x = std::min(std::max(x, 0.f), 1.f);
  }
};

// Plain dense 4-D array (no autodiff); conditioning features, oracles, IO.
template <typename T>
struct Array4 {
  Shape shape;
  std::vector<T> v;

  Array4() = default;
  explicit Array4(Shape s) : shape(s), v(std::size_t(s.numel()), T(0)) {}
  Array4(Shape s, std::vector<T> data) : shape(s), v(std::move(data)) {
    require(std::int64_t(v.size()) == s.numel(), "Array4 size mismatch");
  }

  T& at(int n, int c, int y, int x) {
    return v[((std::size_t(n) * shape.c + c) * shape.h + y) * shape.w + x];
  }
  T at(int n, int c, int y, int x) const {
    return v[((std::size_t(n) * shape.c + c) * shape.h + y) * shape.w + x];
  }
};

template <typename T>
std::vector<T> image_to_chw(const Image& img) {
  std::vector<T> out(img.v.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(img.v[i]);
  return out;
}

template <typename T>
Image image_from_chw(const std::vector<T>& data, int h, int w) {
  Image img(h, w);
  require(data.size() == img.v.size(), "image_from_chw size mismatch");
  for (std::size_t i = 0; i < data.size(); ++i) img.v[i] = float(data[i]);
  return img;
}

// bilinear resize of each (n,c) plane
template <typename T>
Array4<T> bilinear_resize(const Array4<T>& in, int oh, int ow) {
  const Shape& s = in.shape;
  Array4<T> out(Shape(s.n, s.c, oh, ow));
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          double fy = (oh == 1) ? 0.0
                                : double(y) * (s.h - 1) / double(oh - 1);
          double fx = (ow == 1) ? 0.0
                                : double(x) * (s.w - 1) / double(ow - 1);
          int y0 = int(fy), x0 = int(fx);
          int y1 = std::min(y0 + 1, s.h - 1), x1 = std::min(x0 + 1, s.w - 1);
          double ay = fy - y0, ax = fx - x0;
          double val = (1 - ay) * (1 - ax) * double(in.at(n, c, y0, x0)) +
                       (1 - ay) * ax * double(in.at(n, c, y0, x1)) +
                       ay * (1 - ax) * double(in.at(n, c, y1, x0)) +
                       ay * ax * double(in.at(n, c, y1, x1));
          out.at(n, c, y, x) = T(val);
        }
  return out;
}

}  // namespace fusenas
