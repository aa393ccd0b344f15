#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mda/nn/tensor.hpp"

namespace mda::nn {

/// A trainable array with its accumulated gradient.
template <typename T>
struct Param {
  std::string name;
  std::vector<T> value;
  std::vector<T> grad;

  Param() = default;
  Param(std::string n, std::size_t size)
      : name(std::move(n)), value(size, T(0)), grad(size, T(0)) {}

  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

/// Per-call state a convolution needs for its backward pass.
template <typename T>
struct ConvCache {
  int n = 0;
  int in_h = 0;
  int in_w = 0;
  int out_h = 0;
  int out_w = 0;
  /// im2col buffers, one block of (in_c*k*k) x (out_h*out_w) per image; empty
  /// for pointwise convolutions, which keep the input instead.
  std::vector<T> cols;
  Tensor<T> input;
};

/// 2-D convolution, square kernel, zero padding. Weights are laid out
/// (out_channels, in_channels * k * k).
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int in_channels, int out_channels, int kernel,
         int stride, int padding)
      : in_c_(in_channels),
        out_c_(out_channels),
        k_(kernel),
        stride_(stride),
        pad_(padding),
        weight_(name + ".weight",
                static_cast<std::size_t>(out_channels) * in_channels * kernel *
                    kernel),
        bias_(name + ".bias", static_cast<std::size_t>(out_channels)) {}

  int in_channels() const { return in_c_; }
  int out_channels() const { return out_c_; }
  int kernel() const { return k_; }
  int stride() const { return stride_; }
  int padding() const { return pad_; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  const Param<T>& weight() const { return weight_; }
  const Param<T>& bias() const { return bias_; }

  int out_size(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

  /// He-normal weights scaled by `gain`; bias set to `bias_value`.
  template <typename Gen>
  void init(Gen& rng, double gain = 1.0, double bias_value = 0.0) {
    const double fan_in = static_cast<double>(in_c_) * k_ * k_;
    std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / fan_in));
    for (auto& v : weight_.value) v = static_cast<T>(dist(rng));
    for (auto& v : bias_.value) v = static_cast<T>(bias_value);
  }

  /// Normal(0, std) weights, constant bias.
  template <typename Gen>
  void init_normal(Gen& rng, double std, double bias_value = 0.0) {
    std::normal_distribution<double> dist(0.0, std);
    for (auto& v : weight_.value) v = static_cast<T>(dist(rng));
    for (auto& v : bias_.value) v = static_cast<T>(bias_value);
  }

  Tensor<T> forward(const Tensor<T>& x, ConvCache<T>& cache) const {
    if (x.c != in_c_)
      throw ShapeError(weight_.name + ": expected " + std::to_string(in_c_) +
                       " input channels, got " + std::to_string(x.c));
    const int oh = out_size(x.h);
    const int ow = out_size(x.w);
    cache.n = x.n;
    cache.in_h = x.h;
    cache.in_w = x.w;
    cache.out_h = oh;
    cache.out_w = ow;
    Tensor<T> y(x.n, out_c_, oh, ow);
    const int rows = in_c_ * k_ * k_;
    const int cols = oh * ow;
    ConstMapMat<T> W(weight_.value.data(), out_c_, rows);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias_.value.data(),
                                                             out_c_);
    if (pointwise()) {
      cache.input = x;
      cache.cols.clear();
      for (int i = 0; i < x.n; ++i) {
        ConstMapMat<T> X(x.image(i), rows, cols);
        MapMat<T> Y(y.image(i), out_c_, cols);
        Y.noalias() = W * X;
        Y.colwise() += b;
      }
    } else {
      cache.input = Tensor<T>();
      cache.cols.assign(static_cast<std::size_t>(x.n) * rows * cols, T(0));
      for (int i = 0; i < x.n; ++i) {
        T* col = cache.cols.data() + static_cast<std::size_t>(i) * rows * cols;
        im2col(x.image(i), x.h, x.w, oh, ow, col);
        ConstMapMat<T> X(col, rows, cols);
        MapMat<T> Y(y.image(i), out_c_, cols);
        Y.noalias() = W * X;
        Y.colwise() += b;
      }
    }
    return y;
  }

  /// Accumulates parameter gradients; returns the input gradient unless
  /// `need_input_grad` is false (then an empty tensor).
  Tensor<T> backward(const Tensor<T>& dy, const ConvCache<T>& cache,
                     bool need_input_grad = true) {
    const int rows = in_c_ * k_ * k_;
    const int cols = cache.out_h * cache.out_w;
    ConstMapMat<T> W(weight_.value.data(), out_c_, rows);
    MapMat<T> dW(weight_.grad.data(), out_c_, rows);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(bias_.grad.data(), out_c_);
    Tensor<T> dx;
    if (need_input_grad) dx = Tensor<T>(cache.n, in_c_, cache.in_h, cache.in_w);
    std::vector<T> dcol;
    if (need_input_grad && !pointwise())
      dcol.resize(static_cast<std::size_t>(rows) * cols);
    for (int i = 0; i < cache.n; ++i) {
      ConstMapMat<T> dY(dy.image(i), out_c_, cols);
      const T* xin = pointwise()
                         ? cache.input.image(i)
                         : cache.cols.data() + static_cast<std::size_t>(i) * rows * cols;
      ConstMapMat<T> X(xin, rows, cols);
      dW.noalias() += dY * X.transpose();
      // Plain loop: Eigen's vectorized row sums peel by pointer alignment, so
      // their rounding would depend on where the heap put the buffer.
      for (int o = 0; o < out_c_; ++o) {
        const T* row = dy.image(i) + static_cast<std::size_t>(o) * cols;
        T acc = T(0);
        for (int j = 0; j < cols; ++j) acc += row[j];
        db[o] += acc;
      }
      if (!need_input_grad) continue;
      if (pointwise()) {
        MapMat<T> dX(dx.image(i), rows, cols);
        dX.noalias() = W.transpose() * dY;
      } else {
        MapMat<T> dC(dcol.data(), rows, cols);
        dC.noalias() = W.transpose() * dY;
        col2im(dcol.data(), cache.in_h, cache.in_w, cache.out_h, cache.out_w,
               dx.image(i));
      }
    }
    return dx;
  }

  std::vector<Param<T>*> params() { return {&weight_, &bias_}; }

 private:
  bool pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }

  void im2col(const T* img, int h, int w, int oh, int ow, T* col) const {
    const int cols = oh * ow;
    for (int ch = 0; ch < in_c_; ++ch)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          T* row = col + static_cast<std::size_t>((ch * k_ + ky) * k_ + kx) * cols;
          const T* plane = img + static_cast<std::size_t>(ch) * h * w;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            T* out = row + oy * ow;
            if (iy < 0 || iy >= h) {
              std::fill(out, out + ow, T(0));
              continue;
            }
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              out[ox] = (ix >= 0 && ix < w) ? plane[iy * w + ix] : T(0);
            }
          }
        }
  }

  void col2im(const T* col, int h, int w, int oh, int ow, T* img) const {
    const int cols = oh * ow;
    for (int ch = 0; ch < in_c_; ++ch)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          const T* row =
              col + static_cast<std::size_t>((ch * k_ + ky) * k_ + kx) * cols;
          T* plane = img + static_cast<std::size_t>(ch) * h * w;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= h) continue;
            const T* in = row + oy * ow;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix >= 0 && ix < w) plane[iy * w + ix] += in[ox];
            }
          }
        }
  }

  int in_c_ = 0;
  int out_c_ = 0;
  int k_ = 1;
  int stride_ = 1;
  int pad_ = 0;
  Param<T> weight_;
  Param<T> bias_;
};

}  // namespace mda::nn
