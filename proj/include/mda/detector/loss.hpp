#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "mda/core/types.hpp"
#include "mda/detector/anchors.hpp"
#include "mda/detector/model.hpp"
#include "mda/eval/iou.hpp"
#include "mda/nn/ops.hpp"

namespace mda::detector {

struct LossConfig {
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double foreground_iou = 0.5;
  double background_iou = 0.4;
  double smooth_l1_beta = 0.1;
  /// Also promote, for every ground truth, the anchors with its highest IoU.
  bool low_quality_matches = true;
  /// Background anchors overlapping an ignore region this much are ignored.
  double ignore_iou = 0.3;
};

struct LossBundle {
  double l_class = 0.0;
  double l_box = 0.0;

  double total() const { return l_class + l_box; }
};

/// Sigmoid focal loss of one logit against a binary target, with its
/// derivative with respect to the logit.
struct FocalTerm {
  double loss;
  double grad;
};

inline FocalTerm focal_term(double x, bool positive, double alpha, double gamma) {
  const double p = nn::sigmoid(x);
  if (positive) {
    const double log_p = nn::log_sigmoid(x);
    const double q = 1.0 - p;
    const double w = std::pow(q, gamma);
    return {-alpha * w * log_p,
            alpha * w * (gamma * p * log_p - q)};
  }
  const double log_q = nn::log_sigmoid(-x);
  const double w = std::pow(p, gamma);
  return {-(1.0 - alpha) * w * log_q,
          (1.0 - alpha) * w * (p - gamma * (1.0 - p) * log_q)};
}

struct SmoothL1Term {
  double loss;
  double grad;
};

inline SmoothL1Term smooth_l1(double diff, double beta) {
  const double a = std::abs(diff);
  if (beta > 0.0 && a < beta) return {0.5 * diff * diff / beta, diff / beta};
  return {a - 0.5 * beta, diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0)};
}

/// Anchor assignment for one image: -2 ignored, -1 background, otherwise
/// the index of the matched ground truth. Annotations with a negative
/// class_id are ignore regions: they never become matches, and background
/// anchors overlapping one by at least ignore_iou are ignored instead.
inline std::vector<int> match_anchors(const std::vector<BoundingBox>& anchors,
                                      const std::vector<Annotation>& gts,
                                      const LossConfig& cfg) {
  const std::size_t m = anchors.size();
  std::vector<int> out(m, -1);
  if (gts.empty()) return out;
  std::vector<int> match(m, -1);
  std::vector<double> best_iou(m, -1.0);
  std::vector<double> gt_best(gts.size(), 0.0);
  std::vector<double> ignore_iou(m, 0.0);
  std::vector<std::vector<double>> ious(m, std::vector<double>(gts.size(), 0.0));
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = eval::iou(anchors[a], gts[g].box);
      if (gts[g].class_id < 0) {
        ignore_iou[a] = std::max(ignore_iou[a], v);
        continue;
      }
      ious[a][g] = v;
      if (v > best_iou[a]) {
        best_iou[a] = v;
        match[a] = static_cast<int>(g);
      }
      gt_best[g] = std::max(gt_best[g], v);
    }
  for (std::size_t a = 0; a < m; ++a) {
    if (match[a] >= 0 && best_iou[a] >= cfg.foreground_iou)
      out[a] = match[a];
    else if (best_iou[a] >= cfg.background_iou || ignore_iou[a] >= cfg.ignore_iou)
      out[a] = -2;
  }
  if (cfg.low_quality_matches)
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].class_id < 0 || gt_best[g] <= 0.0) continue;
      for (std::size_t a = 0; a < m; ++a)
        if (ious[a][g] == gt_best[g]) out[a] = match[a];
    }
  return out;
}

template <typename T>
struct DetectionLoss {
  LossBundle bundle;
  std::array<nn::Tensor<T>, 3> dlogits;
  std::array<nn::Tensor<T>, 3> ddeltas;
  int num_foreground = 0;
};

/// Focal classification loss plus smooth-L1 box regression, both normalized
/// by the number of foreground anchors in the batch (at least 1).
/// `annotations[i]` are the labels of image i of `outputs`.
template <typename T>
DetectionLoss<T> compute_detection_loss(
    const DetectorOutputs<T>& outputs, const AnchorSet& anchors,
    const std::vector<const std::vector<Annotation>*>& annotations,
    const LossConfig& cfg = {}) {
  const int n = outputs.images();
  const int num_classes = outputs.num_classes;
  const int per_loc = outputs.anchors_per_location;
  if (static_cast<int>(annotations.size()) != n)
    throw ShapeError("compute_detection_loss: " + std::to_string(annotations.size()) +
                     " annotation lists for " + std::to_string(n) + " images");
  for (int l = 0; l < 3; ++l) {
    const std::string name = level_name(static_cast<Level>(3 + l));
    if (outputs.logits[l].h * outputs.logits[l].w * per_loc != anchors.level_count(l))
      throw ShapeError("anchor count mismatch at " + name);
    nn::check_finite(outputs.logits[l], "class logits at " + name);
    nn::check_finite(outputs.deltas[l], "box deltas at " + name);
  }

  DetectionLoss<T> result;
  for (int l = 0; l < 3; ++l) {
    const auto& lg = outputs.logits[l];
    const auto& dl = outputs.deltas[l];
    result.dlogits[l] = nn::Tensor<T>(lg.n, lg.c, lg.h, lg.w);
    result.ddeltas[l] = nn::Tensor<T>(dl.n, dl.c, dl.h, dl.w);
  }

  std::vector<std::vector<int>> matches(n);
  int num_fg = 0;
  for (int i = 0; i < n; ++i) {
    matches[i] = match_anchors(anchors.boxes, *annotations[i], cfg);
    for (int m : matches[i]) num_fg += m >= 0;
  }
  result.num_foreground = num_fg;
  const double norm = std::max(1, num_fg);

  double cls_sum = 0.0;
  double box_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto& gts = *annotations[i];
    for (int l = 0; l < 3; ++l) {
      const auto& lg = outputs.logits[l];
      const auto& dl = outputs.deltas[l];
      auto& glg = result.dlogits[l];
      auto& gdl = result.ddeltas[l];
      const int plane = lg.h * lg.w;
      for (int loc = 0; loc < plane; ++loc)
        for (int a = 0; a < per_loc; ++a) {
          const int anchor = anchors.offsets[l] + loc * per_loc + a;
          const int m = matches[i][anchor];
          if (m == -2) continue;
          const int target = m >= 0 ? gts[m].class_id : -1;
          for (int k = 0; k < num_classes; ++k) {
            const std::size_t idx =
                (static_cast<std::size_t>(i) * lg.c + a * num_classes + k) * plane + loc;
            const FocalTerm f = focal_term(static_cast<double>(lg.data[idx]),
                                           k == target, cfg.focal_alpha,
                                           cfg.focal_gamma);
            cls_sum += f.loss;
            glg.data[idx] = static_cast<T>(f.grad / norm);
          }
          if (m < 0) continue;
          const BoxDelta t = encode_box(anchors.boxes[anchor], gts[m].box);
          const double target_d[4] = {t.dx, t.dy, t.dw, t.dh};
          for (int k = 0; k < 4; ++k) {
            const std::size_t idx =
                (static_cast<std::size_t>(i) * dl.c + a * 4 + k) * plane + loc;
            const SmoothL1Term s = smooth_l1(
                static_cast<double>(dl.data[idx]) - target_d[k], cfg.smooth_l1_beta);
            box_sum += s.loss;
            gdl.data[idx] = static_cast<T>(s.grad / norm);
          }
        }
    }
  }
  result.bundle.l_class = cls_sum / norm;
  result.bundle.l_box = box_sum / norm;
  if (!std::isfinite(result.bundle.l_class) || !std::isfinite(result.bundle.l_box))
    throw NumericError("non-finite detection loss");
  return result;
}

}  // namespace mda::detector
