#pragma once

#include "mda/errors.hpp"
#include "mda/nn/tensor.hpp"

namespace mda::adversarial {

/// Gradient reversal: identity on the forward pass, multiplies the gradient
/// by -lambda on the backward pass.
template <typename T>
struct GradientReversal {
  static nn::Tensor<T> forward(const nn::Tensor<T>& x) { return x; }

  static nn::Tensor<T> backward(const nn::Tensor<T>& grad, double lambda) {
    if (!(lambda >= 0.0)) throw ValidationError("GRL lambda must be >= 0");
    nn::Tensor<T> out = grad;
    const T scale = static_cast<T>(-lambda);
    for (auto& v : out.data) v *= scale;
    return out;
  }
};

template <typename T>
nn::Tensor<T> grl_apply(const nn::Tensor<T>& features, double lambda) {
  if (!(lambda >= 0.0)) throw ValidationError("GRL lambda must be >= 0");
  return GradientReversal<T>::forward(features);
}

}  // namespace mda::adversarial
