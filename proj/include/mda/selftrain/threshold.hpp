#pragma once

#include <cmath>
#include <vector>

#include "mda/core/types.hpp"
#include "mda/errors.hpp"

namespace mda::selftrain {

/// Rising confidence thresholds start, start + step, ..., end.
struct ThresholdSchedule {
  double start = 0.75;
  double step = 0.05;
  double end = 0.90;

  /// Values are snapped to a 1e-6 grid so that decimal schedules come out
  /// exact (0.75 + 3 * 0.05 is 0.9000000000000001 otherwise). Empty when
  /// start > end.
  std::vector<double> values() const {
    std::vector<double> out;
    if (!(start <= end)) return out;
    if (start == end) return {snap(start)};
    if (!(step > 0.0)) return out;
    const auto count = static_cast<long>(std::floor((end - start) / step + 1e-9)) + 1;
    for (long k = 0; k < count; ++k) out.push_back(snap(start + static_cast<double>(k) * step));
    return out;
  }

  std::size_t rounds() const { return values().size(); }

 private:
  static double snap(double v) { return std::round(v * 1e6) / 1e6; }
};

inline void validate(const ThresholdSchedule& s) {
  if (!std::isfinite(s.start) || !std::isfinite(s.end) || !std::isfinite(s.step))
    throw ConfigError("threshold schedule values must be finite");
  if (s.start < 0.0 || s.end > 1.0)
    throw ConfigError("threshold schedule must lie within [0, 1]");
  if (s.values().empty()) throw ConfigError("threshold schedule is empty");
}

/// Annotations for the detections scoring at least `t`, in input order.
inline std::vector<Annotation> filter_detections(const std::vector<Detection>& detections,
                                                 double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("threshold must lie in [0, 1]");
  std::vector<Annotation> out;
  for (const auto& d : detections)
    if (d.score >= t) out.push_back({d.box, d.class_id});
  return out;
}

}  // namespace mda::selftrain
