#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <vector>

#include "mda/core/types.hpp"
#include "mda/eval/iou.hpp"

namespace mda::eval {

/// A scored detection tagged with the image it belongs to.
struct ImageDetection {
  int image = 0;
  BoundingBox box;
  double score = 0.0;
};

/// Marker for classes without ground truth in a split.
inline constexpr double kNotPresent = -1.0;

inline bool present(double ap) { return ap >= 0.0; }

struct PrecisionRecall {
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<bool> true_positive;
};

/// Greedy score-ordered matching: each detection takes the unmatched ground
/// truth of its image with the highest IoU, provided IoU >= threshold.
inline PrecisionRecall precision_recall(std::vector<ImageDetection> detections,
                                        const std::map<int, std::vector<BoundingBox>>& gts,
                                        double iou_threshold) {
  std::stable_sort(detections.begin(), detections.end(),
                   [](const ImageDetection& a, const ImageDetection& b) { return a.score > b.score; });
  std::size_t num_gt = 0;
  std::map<int, std::vector<bool>> used;
  for (const auto& [img, boxes] : gts) {
    num_gt += boxes.size();
    used[img].assign(boxes.size(), false);
  }
  PrecisionRecall pr;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < detections.size(); ++k) {
    const auto& d = detections[k];
    bool hit = false;
    auto it = gts.find(d.image);
    if (it != gts.end()) {
      auto& flags = used[d.image];
      double best = -1.0;
      int best_j = -1;
      for (std::size_t j = 0; j < it->second.size(); ++j) {
        if (flags[j]) continue;
        const double v = iou(d.box, it->second[j]);
        if (v > best) {
          best = v;
          best_j = static_cast<int>(j);
        }
      }
      if (best_j >= 0 && best >= iou_threshold) {
        flags[best_j] = true;
        hit = true;
      }
    }
    tp += hit;
    pr.true_positive.push_back(hit);
    pr.precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    pr.recall.push_back(num_gt ? static_cast<double>(tp) / static_cast<double>(num_gt) : 0.0);
  }
  return pr;
}

/// All-point interpolated AP: area under the precision envelope
/// p_interp(r) = max_{r' >= r} p(r'). Returns kNotPresent without ground
/// truth and 0 when there are ground truths but no detections.
inline double average_precision(const std::vector<ImageDetection>& detections,
                                const std::map<int, std::vector<BoundingBox>>& gts,
                                double iou_threshold = 0.5) {
  std::size_t num_gt = 0;
  for (const auto& [img, boxes] : gts) num_gt += boxes.size();
  if (num_gt == 0) return kNotPresent;
  if (detections.empty()) return 0.0;
  const PrecisionRecall pr = precision_recall(detections, gts, iou_threshold);
  const std::size_t n = pr.precision.size();
  std::vector<double> envelope(pr.precision);
  for (std::size_t k = n - 1; k-- > 0;) envelope[k] = std::max(envelope[k], envelope[k + 1]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (pr.recall[k] > prev_recall) {
      ap += (pr.recall[k] - prev_recall) * envelope[k];
      prev_recall = pr.recall[k];
    }
  }
  return ap;
}

/// Mean over present classes; 0 when no class is present.
inline double mean_ap(const std::vector<double>& per_class) {
  double sum = 0.0;
  int count = 0;
  for (double ap : per_class)
    if (present(ap)) {
      sum += ap;
      ++count;
    }
  return count ? sum / count : 0.0;
}

}  // namespace mda::eval
