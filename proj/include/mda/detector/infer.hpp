#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "mda/core/types.hpp"
#include "mda/detector/anchors.hpp"
#include "mda/detector/model.hpp"
#include "mda/eval/iou.hpp"
#include "mda/nn/ops.hpp"

namespace mda::detector {

struct InferConfig {
  double score_floor = 0.05;
  double nms_iou = 0.5;
  int top_k_per_level = 1000;
  int max_detections = 100;
  /// Images per forward pass.
  int batch_size = 16;
};

inline void validate(const InferConfig& c) {
  if (!(c.score_floor >= 0.0 && c.score_floor < 1.0))
    throw ValidationError("score_floor must lie in [0, 1)");
  if (!(c.nms_iou > 0.0 && c.nms_iou <= 1.0))
    throw ValidationError("nms_iou must lie in (0, 1]");
}

/// Per-class greedy non-maximum suppression. Returns detections sorted by
/// descending score (stable for ties); same-class survivors overlap by at
/// most `nms_iou`.
inline std::vector<Detection> nms(std::vector<Detection> dets, double nms_iou,
                                  int max_detections = 0) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    bool suppressed = false;
    for (const auto& k : kept)
      if (k.class_id == d.class_id && eval::iou(k.box, d.box) > nms_iou) {
        suppressed = true;
        break;
      }
    if (suppressed) continue;
    kept.push_back(d);
    if (max_detections > 0 && static_cast<int>(kept.size()) >= max_detections) break;
  }
  return kept;
}

/// Turns head outputs of image `i` into final detections.
template <typename T>
std::vector<Detection> decode_detections(const DetectorOutputs<T>& out, int i,
                                         const AnchorSet& anchors, int image_h,
                                         int image_w, const InferConfig& cfg) {
  std::vector<Detection> candidates;
  const int c = out.num_classes;
  const int per_loc = out.anchors_per_location;
  for (int l = 0; l < 3; ++l) {
    const auto& lg = out.logits[l];
    const auto& dl = out.deltas[l];
    const int plane = lg.h * lg.w;
    std::vector<Detection> level;
    for (int loc = 0; loc < plane; ++loc)
      for (int a = 0; a < per_loc; ++a) {
        const int anchor = anchors.offsets[l] + loc * per_loc + a;
        for (int k = 0; k < c; ++k) {
          const double score = nn::sigmoid(static_cast<double>(
              lg.data[(static_cast<std::size_t>(i) * lg.c + a * c + k) * plane + loc]));
          if (score < cfg.score_floor) continue;
          auto d = [&](int j) {
            return static_cast<double>(
                dl.data[(static_cast<std::size_t>(i) * dl.c + a * 4 + j) * plane + loc]);
          };
          BoundingBox box = decode_box(anchors.boxes[anchor], {d(0), d(1), d(2), d(3)})
                                .clipped(image_w, image_h);
          if (!box.valid()) continue;
          level.push_back({box, k, score});
        }
      }
    if (static_cast<int>(level.size()) > cfg.top_k_per_level) {
      std::stable_sort(level.begin(), level.end(),
                       [](const Detection& x, const Detection& y) { return x.score > y.score; });
      level.resize(cfg.top_k_per_level);
    }
    candidates.insert(candidates.end(), level.begin(), level.end());
  }
  return nms(std::move(candidates), cfg.nms_iou, cfg.max_detections);
}

/// Detections for every image, computed in forward batches of
/// `cfg.batch_size`. Images must share one size.
template <typename T>
std::vector<std::vector<Detection>> infer_batch(const Detector<T>& model,
                                                const std::vector<const Image*>& images,
                                                const InferConfig& cfg = {}) {
  validate(cfg);
  std::vector<std::vector<Detection>> result;
  result.reserve(images.size());
  if (images.empty()) return result;
  const AnchorSet anchors =
      make_anchors(images[0]->height, images[0]->width, model.config().anchors);
  for (std::size_t start = 0; start < images.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(images.size(), start + cfg.batch_size);
    std::vector<const Image*> chunk(images.begin() + start, images.begin() + end);
    const auto x = images_to_tensor<T>(chunk, model.config());
    ForwardState<T> st;
    const auto out = model.forward(x, st, x.n);
    for (int l = 0; l < 3; ++l)
      nn::check_finite(out.logits[l],
                       std::string("class logits at ") + level_name(static_cast<Level>(3 + l)));
    for (int i = 0; i < x.n; ++i)
      result.push_back(decode_detections(out, i, anchors, x.h, x.w, cfg));
  }
  return result;
}

template <typename T>
std::vector<Detection> infer(const Detector<T>& model, const Image& image,
                             double score_floor = 0.05, double nms_iou = 0.5) {
  InferConfig cfg;
  cfg.score_floor = score_floor;
  cfg.nms_iou = nms_iou;
  return infer_batch(model, {&image}, cfg).front();
}

}  // namespace mda::detector
