#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mda/nn/conv.hpp"
#include "mda/nn/tensor.hpp"

namespace mda::nn {

template <typename T>
void relu_inplace(Tensor<T>& x) {
  for (auto& v : x.data) v = v > T(0) ? v : T(0);
}

/// Backward of ReLU given its output `y`.
template <typename T>
void relu_backward_inplace(Tensor<T>& dy, const Tensor<T>& y) {
  for (std::size_t i = 0; i < dy.size(); ++i)
    if (!(y.data[i] > T(0))) dy.data[i] = T(0);
}

/// Nearest-neighbour 2x upsampling cropped to (out_h, out_w); handles the
/// odd sizes produced by ceiling division.
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x, int out_h, int out_w) {
  Tensor<T> y(x.n, x.c, out_h, out_w);
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch)
      for (int oy = 0; oy < out_h; ++oy) {
        const int sy = std::min(oy / 2, x.h - 1);
        for (int ox = 0; ox < out_w; ++ox)
          y.at(i, ch, oy, ox) = x.at(i, ch, sy, std::min(ox / 2, x.w - 1));
      }
  return y;
}

template <typename T>
Tensor<T> upsample2x_backward(const Tensor<T>& dy, int in_h, int in_w) {
  Tensor<T> dx(dy.n, dy.c, in_h, in_w);
  for (int i = 0; i < dy.n; ++i)
    for (int ch = 0; ch < dy.c; ++ch)
      for (int oy = 0; oy < dy.h; ++oy) {
        const int sy = std::min(oy / 2, in_h - 1);
        for (int ox = 0; ox < dy.w; ++ox)
          dx.at(i, ch, sy, std::min(ox / 2, in_w - 1)) += dy.at(i, ch, oy, ox);
      }
  return dx;
}

/// Numerically stable log(sigmoid(x)).
template <typename T>
T log_sigmoid(T x) {
  return x >= T(0) ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace mda::nn
