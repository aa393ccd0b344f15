#pragma once

// Brute-force reference for per-class average precision, written without
// reusing the library's matcher or envelope code, plus a generator of small
// random detection/ground-truth instances.

#include <algorithm>
#include <cstddef>
#include <map>
#include <random>
#include <vector>

#include "mda/core/types.hpp"
#include "mda/eval/average_precision.hpp"

namespace oracle {

struct Instance {
  std::vector<mda::eval::ImageDetection> detections;
  std::map<int, std::vector<mda::BoundingBox>> ground_truth;
};

inline double box_iou(const mda::BoundingBox& a, const mda::BoundingBox& b) {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (w <= 0 || h <= 0) return 0.0;
  const double inter = w * h;
  const double ua = (a.x_max - a.x_min) * (a.y_max - a.y_min) +
                    (b.x_max - b.x_min) * (b.y_max - b.y_min) - inter;
  return ua > 0 ? inter / ua : 0.0;
}

/// AP as the sum over recall steps of (r_i - r_{i-1}) times the best
/// precision reached at any recall >= r_i, by exhaustive scan. Returns -1
/// without ground truth.
inline double brute_force_ap(const Instance& inst, double iou_threshold) {
  std::size_t total_gt = 0;
  for (const auto& [img, boxes] : inst.ground_truth) total_gt += boxes.size();
  if (total_gt == 0) return -1.0;

  // Order: score descending, ties by input position.
  std::vector<std::size_t> order(inst.detections.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = 0; i < order.size(); ++i)
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const auto& a = inst.detections[order[i]];
      const auto& b = inst.detections[order[j]];
      if (b.score > a.score || (b.score == a.score && order[j] < order[i]))
        std::swap(order[i], order[j]);
    }

  std::map<int, std::vector<char>> taken;
  std::vector<double> prec, rec;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& d = inst.detections[order[k]];
    auto it = inst.ground_truth.find(d.image);
    if (it != inst.ground_truth.end()) {
      auto& used = taken[d.image];
      used.resize(it->second.size(), 0);
      int pick = -1;
      double best = 0.0;
      for (std::size_t g = 0; g < it->second.size(); ++g) {
        if (used[g]) continue;
        const double o = box_iou(d.box, it->second[g]);
        if (pick < 0 || o > best) {
          pick = static_cast<int>(g);
          best = o;
        }
      }
      if (pick >= 0 && best >= iou_threshold) {
        used[pick] = 1;
        ++hits;
      }
    }
    prec.push_back(double(hits) / double(k + 1));
    rec.push_back(double(hits) / double(total_gt));
  }

  double ap = 0.0, last = 0.0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    if (!(rec[i] > last)) continue;
    double best = 0.0;
    for (std::size_t j = 0; j < rec.size(); ++j)
      if (rec[j] >= rec[i]) best = std::max(best, prec[j]);
    ap += (rec[i] - last) * best;
    last = rec[i];
  }
  return ap;
}

/// 1-4 images, 0-4 boxes each, detections that are either jittered copies
/// of ground truth or random clutter. Scores are coarse so ties occur.
template <typename Gen>
Instance random_instance(Gen& rng) {
  std::uniform_int_distribution<int> n_img(1, 4), n_gt(0, 4), n_det(0, 10), coin(0, 2);
  std::uniform_real_distribution<double> pos(0.0, 48.0), size(4.0, 16.0), jitter(-3.0, 3.0);
  std::uniform_int_distribution<int> score_step(0, 20);
  Instance inst;
  const int images = n_img(rng);
  for (int i = 0; i < images; ++i) {
    const int g = n_gt(rng);
    for (int k = 0; k < g; ++k) {
      const double x = pos(rng), y = pos(rng);
      inst.ground_truth[i].push_back({x, y, x + size(rng), y + size(rng)});
    }
  }
  const int dets = n_det(rng);
  for (int k = 0; k < dets; ++k) {
    const int img = std::uniform_int_distribution<int>(0, images - 1)(rng);
    mda::BoundingBox b;
    auto it = inst.ground_truth.find(img);
    if (coin(rng) > 0 && it != inst.ground_truth.end() && !it->second.empty()) {
      const auto& gt = it->second[std::uniform_int_distribution<std::size_t>(
          0, it->second.size() - 1)(rng)];
      b = {gt.x_min + jitter(rng), gt.y_min + jitter(rng), gt.x_max + jitter(rng),
           gt.y_max + jitter(rng)};
      if (!(b.x_min < b.x_max && b.y_min < b.y_max)) b = gt;
    } else {
      const double x = pos(rng), y = pos(rng);
      b = {x, y, x + size(rng), y + size(rng)};
    }
    inst.detections.push_back({img, b, score_step(rng) / 20.0});
  }
  return inst;
}

}  // namespace oracle
