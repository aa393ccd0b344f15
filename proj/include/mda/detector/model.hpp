#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mda/core/types.hpp"
#include "mda/detector/anchors.hpp"
#include "mda/nn/conv.hpp"
#include "mda/nn/ops.hpp"
#include "mda/nn/tensor.hpp"

namespace mda::detector {

using nn::Tensor;

struct DetectorConfig {
  int num_classes = 5;
  /// Output widths of the five stride-2 stages: strides 2, 4, 8 (C3), 16
  /// (C4), 32 (C5).
  std::array<int, 5> backbone_channels = {16, 32, 48, 64, 64};
  int fpn_channels = 32;
  int head_channels = 32;
  AnchorConfig anchors;
  double prior_probability = 0.01;
  float input_mean = 0.5f;
  float input_scale = 4.0f;

  int c_channels(int level_index) const { return backbone_channels[2 + level_index]; }
  int channels(Level l) const {
    return is_backbone_level(l) ? c_channels(level_index(l)) : fpn_channels;
  }
};

inline void to_json(nlohmann::json& j, const DetectorConfig& c) {
  j = {{"num_classes", c.num_classes},
       {"backbone_channels", c.backbone_channels},
       {"fpn_channels", c.fpn_channels},
       {"head_channels", c.head_channels},
       {"anchor_size_per_stride", c.anchors.size_per_stride},
       {"anchor_scales", c.anchors.scales},
       {"anchor_aspect_ratios", c.anchors.aspect_ratios},
       {"prior_probability", c.prior_probability},
       {"input_mean", c.input_mean},
       {"input_scale", c.input_scale}};
}

inline void from_json(const nlohmann::json& j, DetectorConfig& c) {
  DetectorConfig d;
  c.num_classes = j.value("num_classes", d.num_classes);
  c.backbone_channels = j.value("backbone_channels", d.backbone_channels);
  c.fpn_channels = j.value("fpn_channels", d.fpn_channels);
  c.head_channels = j.value("head_channels", d.head_channels);
  c.anchors.size_per_stride =
      j.value("anchor_size_per_stride", d.anchors.size_per_stride);
  c.anchors.scales = j.value("anchor_scales", d.anchors.scales);
  c.anchors.aspect_ratios = j.value("anchor_aspect_ratios", d.anchors.aspect_ratios);
  c.prior_probability = j.value("prior_probability", d.prior_probability);
  c.input_mean = j.value("input_mean", d.input_mean);
  c.input_scale = j.value("input_scale", d.input_scale);
}

/// Named feature maps. Index with a Level; absent levels have n == 0.
template <typename T>
struct FeaturePyramid {
  std::array<Tensor<T>, 6> levels;

  bool has(Level l) const { return levels[static_cast<int>(l)].n > 0; }
  const Tensor<T>& get(Level l) const { return levels[static_cast<int>(l)]; }
  Tensor<T>& get(Level l) { return levels[static_cast<int>(l)]; }
  static int stride(Level l) { return level_stride(l); }
};

/// Per prediction level (P3, P4, P5) class logits with A*C channels and box
/// deltas with A*4 channels. Channel a*C + k holds class k of anchor a.
template <typename T>
struct DetectorOutputs {
  int num_classes = 0;
  int anchors_per_location = 1;
  std::array<Tensor<T>, 3> logits;
  std::array<Tensor<T>, 3> deltas;

  int images() const { return logits[0].n; }
};

/// Everything the backward pass needs from one forward pass.
template <typename T>
struct ForwardState {
  int batch = 0;
  int image_h = 0;
  int image_w = 0;
  std::array<nn::ConvCache<T>, 5> stage_cache;
  std::array<Tensor<T>, 5> stage_out;  // post-ReLU; [2..4] are C3..C5
  std::array<nn::ConvCache<T>, 3> lateral_cache;
  std::array<nn::ConvCache<T>, 3> output_cache;
  FeaturePyramid<T> pyramid;

  int head_images = 0;
  std::array<nn::ConvCache<T>, 3> cls_hidden_cache;
  std::array<nn::ConvCache<T>, 3> cls_out_cache;
  std::array<nn::ConvCache<T>, 3> box_hidden_cache;
  std::array<nn::ConvCache<T>, 3> box_out_cache;
  std::array<Tensor<T>, 3> cls_hidden;
  std::array<Tensor<T>, 3> box_hidden;
};

/// Stacks images into a normalized NCHW tensor. All images must share H x W.
template <typename T>
Tensor<T> images_to_tensor(const std::vector<const Image*>& images,
                           const DetectorConfig& config) {
  if (images.empty()) throw ShapeError("empty image batch");
  const int h = images[0]->height;
  const int w = images[0]->width;
  Tensor<T> x(static_cast<int>(images.size()), 3, h, w);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = *images[i];
    if (img.height != h || img.width != w)
      throw ShapeError("non-uniform batch: image " + std::to_string(i) + " is " +
                       std::to_string(img.height) + "x" + std::to_string(img.width) +
                       ", expected " + std::to_string(h) + "x" + std::to_string(w));
    T* dst = x.image(static_cast<int>(i));
    for (std::size_t k = 0; k < img.data.size(); ++k)
      dst[k] = static_cast<T>((img.data[k] - config.input_mean) * config.input_scale);
  }
  return x;
}

/// Compact RetinaNet-style detector: five stride-2 convolution stages (C3,
/// C4, C5 at strides 8/16/32), a top-down feature pyramid (P3..P5) and class
/// and box subnets shared across pyramid levels.
template <typename T>
class Detector {
 public:
  Detector() = default;
  explicit Detector(DetectorConfig config) : config_(std::move(config)) {
    const auto& bc = config_.backbone_channels;
    int in = 3;
    for (int s = 0; s < 5; ++s) {
      stages_[s] = nn::Conv2d<T>("backbone.stage" + std::to_string(s + 1), in,
                                 bc[s], 3, 2, 1);
      in = bc[s];
    }
    const int f = config_.fpn_channels;
    for (int l = 0; l < 3; ++l) {
      lateral_[l] = nn::Conv2d<T>("fpn.lateral" + std::to_string(l + 3),
                                  config_.c_channels(l), f, 1, 1, 0);
      output_[l] = nn::Conv2d<T>("fpn.output" + std::to_string(l + 3), f, f, 3, 1, 1);
    }
    const int hc = config_.head_channels;
    const int a = config_.anchors.per_location();
    cls_hidden_ = nn::Conv2d<T>("head.cls_hidden", f, hc, 3, 1, 1);
    cls_out_ = nn::Conv2d<T>("head.cls_out", hc, a * config_.num_classes, 3, 1, 1);
    box_hidden_ = nn::Conv2d<T>("head.box_hidden", f, hc, 3, 1, 1);
    box_out_ = nn::Conv2d<T>("head.box_out", hc, a * 4, 3, 1, 1);
  }

  const DetectorConfig& config() const { return config_; }

  template <typename Gen>
  void init(Gen& rng) {
    for (auto& s : stages_) s.init(rng);
    for (auto& l : lateral_) l.init(rng, std::sqrt(0.5));
    for (auto& o : output_) o.init(rng, std::sqrt(0.5));
    cls_hidden_.init(rng);
    box_hidden_.init(rng);
    const double p = config_.prior_probability;
    cls_out_.init_normal(rng, 0.01, -std::log((1.0 - p) / p));
    box_out_.init_normal(rng, 0.01, 0.0);
  }

  std::vector<nn::Param<T>*> params() {
    std::vector<nn::Param<T>*> out;
    auto add = [&](nn::Conv2d<T>& c) {
      for (auto* p : c.params()) out.push_back(p);
    };
    for (auto& s : stages_) add(s);
    for (auto& l : lateral_) add(l);
    for (auto& o : output_) add(o);
    add(cls_hidden_);
    add(cls_out_);
    add(box_hidden_);
    add(box_out_);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : params()) n += p->size();
    return n;
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

  /// Backbone stages; fills C3..C5 of the state's pyramid.
  const FeaturePyramid<T>& backbone_forward(const Tensor<T>& x,
                                            ForwardState<T>& st) const {
    st.batch = x.n;
    st.image_h = x.h;
    st.image_w = x.w;
    st.pyramid = FeaturePyramid<T>();
    const Tensor<T>* in = &x;
    for (int s = 0; s < 5; ++s) {
      st.stage_out[s] = stages_[s].forward(*in, st.stage_cache[s]);
      nn::relu_inplace(st.stage_out[s]);
      in = &st.stage_out[s];
    }
    st.pyramid.get(Level::C3) = st.stage_out[2];
    st.pyramid.get(Level::C4) = st.stage_out[3];
    st.pyramid.get(Level::C5) = st.stage_out[4];
    return st.pyramid;
  }

  /// Top-down pyramid; requires C3..C5 in the state, fills P3..P5.
  const FeaturePyramid<T>& fpn_forward(ForwardState<T>& st) const {
    for (Level l : {Level::C3, Level::C4, Level::C5})
      if (!st.pyramid.has(l))
        throw ShapeError(std::string("fpn_forward: missing ") + level_name(l));
    std::array<Tensor<T>, 3> merged;
    for (int l = 2; l >= 0; --l) {
      const auto& c = st.pyramid.get(static_cast<Level>(l));
      merged[l] = lateral_[l].forward(c, st.lateral_cache[l]);
      if (l < 2) nn::add_into(merged[l], nn::upsample2x(merged[l + 1], c.h, c.w));
    }
    for (int l = 0; l < 3; ++l)
      st.pyramid.get(static_cast<Level>(3 + l)) =
          output_[l].forward(merged[l], st.output_cache[l]);
    return st.pyramid;
  }

  /// Runs the subnets on the first `head_images` images of the batch.
  DetectorOutputs<T> heads_forward(ForwardState<T>& st, int head_images) const {
    DetectorOutputs<T> out;
    out.num_classes = config_.num_classes;
    out.anchors_per_location = config_.anchors.per_location();
    st.head_images = head_images;
    if (head_images == 0) return out;
    for (int l = 0; l < 3; ++l) {
      const auto& p = st.pyramid.get(static_cast<Level>(3 + l));
      const Tensor<T> part = head_images == p.n ? p : p.head(head_images);
      st.cls_hidden[l] = cls_hidden_.forward(part, st.cls_hidden_cache[l]);
      nn::relu_inplace(st.cls_hidden[l]);
      out.logits[l] = cls_out_.forward(st.cls_hidden[l], st.cls_out_cache[l]);
      st.box_hidden[l] = box_hidden_.forward(part, st.box_hidden_cache[l]);
      nn::relu_inplace(st.box_hidden[l]);
      out.deltas[l] = box_out_.forward(st.box_hidden[l], st.box_out_cache[l]);
    }
    return out;
  }

  DetectorOutputs<T> forward(const Tensor<T>& x, ForwardState<T>& st,
                             int head_images) const {
    backbone_forward(x, st);
    fpn_forward(st);
    return heads_forward(st, head_images);
  }

  /// Backpropagates head-output gradients (may be null when the heads did not
  /// run) plus optional extra gradients arriving directly at pyramid levels
  /// (from discriminators). Extra tensors with n == 0 are treated as zero.
  void backward(ForwardState<T>& st, const std::array<Tensor<T>, 3>* dlogits,
                const std::array<Tensor<T>, 3>* ddeltas,
                const std::array<Tensor<T>, 6>& extra) {
    std::array<Tensor<T>, 3> dp;
    for (int l = 0; l < 3; ++l) {
      const auto& p = st.pyramid.get(static_cast<Level>(3 + l));
      dp[l] = Tensor<T>(p.n, p.c, p.h, p.w);
      if (st.head_images > 0 && dlogits != nullptr) {
        Tensor<T> dh = cls_out_.backward((*dlogits)[l], st.cls_out_cache[l]);
        nn::relu_backward_inplace(dh, st.cls_hidden[l]);
        Tensor<T> dpart = cls_hidden_.backward(dh, st.cls_hidden_cache[l]);
        Tensor<T> db = box_out_.backward((*ddeltas)[l], st.box_out_cache[l]);
        nn::relu_backward_inplace(db, st.box_hidden[l]);
        nn::add_into(dpart, box_hidden_.backward(db, st.box_hidden_cache[l]));
        std::copy(dpart.data.begin(), dpart.data.end(), dp[l].data.begin());
      }
      const auto& e = extra[3 + l];
      if (e.n > 0) nn::add_into(dp[l], e);
    }
    std::array<Tensor<T>, 3> dmerged;
    for (int l = 0; l < 3; ++l)
      dmerged[l] = output_[l].backward(dp[l], st.output_cache[l]);
    for (int l = 0; l < 2; ++l) {
      const auto& c = st.pyramid.get(static_cast<Level>(l + 1));
      nn::add_into(dmerged[l + 1], nn::upsample2x_backward(dmerged[l], c.h, c.w));
    }
    std::array<Tensor<T>, 3> dc;
    for (int l = 0; l < 3; ++l) {
      dc[l] = lateral_[l].backward(dmerged[l], st.lateral_cache[l]);
      if (extra[l].n > 0) nn::add_into(dc[l], extra[l]);
    }
    Tensor<T> g = std::move(dc[2]);
    for (int s = 4; s >= 0; --s) {
      nn::relu_backward_inplace(g, st.stage_out[s]);
      Tensor<T> gin = stages_[s].backward(g, st.stage_cache[s], s > 0);
      if (s == 0) break;
      if (s - 1 >= 2) nn::add_into(gin, dc[s - 1 - 2]);
      g = std::move(gin);
    }
  }

  /// Copies parameter values from a detector of another precision.
  template <typename U>
  void copy_from(Detector<U>& other) {
    auto mine = params();
    auto theirs = other.params();
    for (std::size_t i = 0; i < mine.size(); ++i)
      for (std::size_t j = 0; j < mine[i]->size(); ++j)
        mine[i]->value[j] = static_cast<T>(theirs[i]->value[j]);
  }

 private:
  DetectorConfig config_;
  std::array<nn::Conv2d<T>, 5> stages_;
  std::array<nn::Conv2d<T>, 3> lateral_;
  std::array<nn::Conv2d<T>, 3> output_;
  nn::Conv2d<T> cls_hidden_;
  nn::Conv2d<T> cls_out_;
  nn::Conv2d<T> box_hidden_;
  nn::Conv2d<T> box_out_;
};

}  // namespace mda::detector
