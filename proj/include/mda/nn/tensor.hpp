#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mda/errors.hpp"

namespace mda::nn {

/// Dense NCHW tensor.
template <typename T>
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_),
        data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t image_stride() const { return static_cast<std::size_t>(c) * h * w; }

  T* image(int i) { return data.data() + i * image_stride(); }
  const T* image(int i) const { return data.data() + i * image_stride(); }

  T& at(int i, int ch, int y, int x) {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
  T at(int i, int ch, int y, int x) const {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }

  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  void zero() { std::fill(data.begin(), data.end(), T(0)); }

  /// First `count` images as a new tensor.
  Tensor head(int count) const {
    Tensor out(count, c, h, w);
    std::copy_n(data.begin(), count * image_stride(), out.data.begin());
    return out;
  }

  /// Images [first, first + count).
  Tensor slice(int first, int count) const {
    Tensor out(count, c, h, w);
    std::copy_n(data.begin() + first * image_stride(), count * image_stride(),
                out.data.begin());
    return out;
  }

  /// Embeds `part` (images [0, part.n)) into a zero tensor of `total` images.
  static Tensor pad_batch(const Tensor& part, int total) {
    Tensor out(total, part.c, part.h, part.w);
    std::copy(part.data.begin(), part.data.end(), out.data.begin());
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(n, c, h, w);
    std::transform(data.begin(), data.end(), out.data.begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  std::string shape_string() const {
    return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " +
           std::to_string(h) + ", " + std::to_string(w) + ")";
  }
};

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  if (!dst.same_shape(src))
    throw ShapeError("add_into: " + dst.shape_string() + " vs " +
                     src.shape_string());
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

template <typename T>
void check_finite(const Tensor<T>& t, const std::string& what) {
  for (const T v : t.data)
    if (!std::isfinite(v)) throw NumericError("non-finite value in " + what);
}

}  // namespace mda::nn
