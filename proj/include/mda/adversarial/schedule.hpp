#pragma once

#include <cmath>

#include "mda/detector/loss.hpp"
#include "mda/errors.hpp"

namespace mda::adversarial {

/// Ramp used to warm up the reversal weight: 2 / (1 + exp(-gamma p)) - 1.
inline double lambda_schedule(double progress, double gamma = 10.0) {
  if (!(progress >= 0.0 && progress <= 1.0))
    throw ValidationError("lambda_schedule: progress must lie in [0, 1]");
  return 2.0 / (1.0 + std::exp(-gamma * progress)) - 1.0;
}

/// The adversarial objective L_class + L_box - lambda * L_D as a value. The
/// optimizer never evaluates this directly: it minimizes L_class + L_box + L_D
/// and the reversal layer supplies the -lambda factor on the feature side.
inline double total_loss(const detector::LossBundle& det, double l_d, double lambda) {
  if (!std::isfinite(det.l_class) || !std::isfinite(det.l_box) ||
      !std::isfinite(l_d) || !std::isfinite(lambda))
    throw NumericError("total_loss: non-finite input");
  return det.l_class + det.l_box - lambda * l_d;
}

}  // namespace mda::adversarial
