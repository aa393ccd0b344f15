#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mda/detector/anchors.hpp"
#include "mda/detector/model.hpp"
#include "mda/errors.hpp"
#include "mda/nn/conv.hpp"
#include "mda/nn/ops.hpp"

namespace mda::adversarial {

using detector::Level;
using nn::Tensor;

enum class DiscriminatorMode { kMulticlass, kBinary };

struct DiscriminatorConfig {
  std::vector<Level> attachment_levels = {Level::C3};
  int num_domain_classes = 3;
  DiscriminatorMode mode = DiscriminatorMode::kMulticlass;
  /// 0 means "same as the attachment level's channel width".
  int hidden_channels = 0;
  /// Sum the per-level domain losses (true) or average them.
  bool sum_over_levels = true;
  /// Scale of the per-level cross-entropy inside L_D. Small detectors trained
  /// from scratch are swamped by a full-strength reversed gradient.
  double loss_weight = 0.1;

  /// Discriminator class of the domain at position `domain_index` in the
  /// training domain list (0 = source).
  int domain_class(int domain_index) const {
    if (mode == DiscriminatorMode::kBinary) return domain_index == 0 ? 0 : 1;
    return domain_index;
  }

  static DiscriminatorConfig for_targets(int num_targets,
                                         DiscriminatorMode mode = DiscriminatorMode::kMulticlass,
                                         std::vector<Level> levels = {Level::C3}) {
    DiscriminatorConfig c;
    c.mode = mode;
    c.attachment_levels = std::move(levels);
    c.num_domain_classes = mode == DiscriminatorMode::kBinary ? 2 : 1 + num_targets;
    return c;
  }
};

inline void validate(const DiscriminatorConfig& c, int num_targets) {
  if (c.attachment_levels.empty())
    throw ConfigError("discriminator needs at least one attachment level");
  if (c.mode == DiscriminatorMode::kBinary && c.num_domain_classes != 2)
    throw ConfigError("binary discriminator must have 2 domain classes");
  if (c.mode == DiscriminatorMode::kMulticlass && c.num_domain_classes != 1 + num_targets)
    throw ConfigError("multiclass discriminator needs 1 + D = " +
                      std::to_string(1 + num_targets) + " domain classes, got " +
                      std::to_string(c.num_domain_classes));
  if (!(c.loss_weight >= 0.0) || !std::isfinite(c.loss_weight))
    throw ConfigError("discriminator loss_weight must be a finite value >= 0");
  std::vector<Level> seen;
  for (Level l : c.attachment_levels) {
    if (std::find(seen.begin(), seen.end(), l) != seen.end())
      throw ConfigError(std::string("duplicate attachment level ") +
                        detector::level_name(l));
    seen.push_back(l);
  }
}

inline void to_json(nlohmann::json& j, const DiscriminatorConfig& c) {
  std::vector<std::string> levels;
  for (Level l : c.attachment_levels) levels.emplace_back(detector::level_name(l));
  j = {{"attachment_levels", levels},
       {"num_domain_classes", c.num_domain_classes},
       {"mode", c.mode == DiscriminatorMode::kBinary ? "binary" : "multiclass"},
       {"hidden_channels", c.hidden_channels},
       {"sum_over_levels", c.sum_over_levels},
       {"loss_weight", c.loss_weight}};
}

inline void from_json(const nlohmann::json& j, DiscriminatorConfig& c) {
  DiscriminatorConfig d;
  c.attachment_levels.clear();
  if (j.contains("attachment_levels"))
    for (const auto& s : j["attachment_levels"])
      c.attachment_levels.push_back(detector::parse_level(s.get<std::string>()));
  else
    c.attachment_levels = d.attachment_levels;
  c.num_domain_classes = j.value("num_domain_classes", d.num_domain_classes);
  const std::string mode = j.value("mode", std::string("multiclass"));
  if (mode == "binary")
    c.mode = DiscriminatorMode::kBinary;
  else if (mode == "multiclass")
    c.mode = DiscriminatorMode::kMulticlass;
  else
    throw ConfigError("unknown discriminator mode '" + mode + "'");
  c.hidden_channels = j.value("hidden_channels", d.hidden_channels);
  c.sum_over_levels = j.value("sum_over_levels", d.sum_over_levels);
  c.loss_weight = j.value("loss_weight", d.loss_weight);
}

template <typename T>
struct DiscriminatorState {
  std::array<nn::ConvCache<T>, 3> cache;
  std::array<Tensor<T>, 2> hidden;  // post-ReLU
};

/// Dense domain classifier: three kernel-size-1 convolutions, ReLU after the
/// first two. Emits one logit map per domain class at the input resolution.
template <typename T>
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const std::string& name, int in_channels, int hidden, int classes)
      : in_c_(in_channels),
        conv_{nn::Conv2d<T>(name + ".conv1", in_channels, hidden, 1, 1, 0),
              nn::Conv2d<T>(name + ".conv2", hidden, hidden, 1, 1, 0),
              nn::Conv2d<T>(name + ".conv3", hidden, classes, 1, 1, 0)} {}

  int in_channels() const { return in_c_; }
  int num_classes() const { return conv_[2].out_channels(); }

  template <typename Gen>
  void init(Gen& rng) {
    conv_[0].init(rng);
    conv_[1].init(rng);
    conv_[2].init_normal(rng, 0.01);
  }

  Tensor<T> forward(const Tensor<T>& x, DiscriminatorState<T>& st) const {
    if (x.c != in_c_)
      throw ShapeError("discriminator expects " + std::to_string(in_c_) +
                       " channels, got " + std::to_string(x.c));
    st.hidden[0] = conv_[0].forward(x, st.cache[0]);
    nn::relu_inplace(st.hidden[0]);
    st.hidden[1] = conv_[1].forward(st.hidden[0], st.cache[1]);
    nn::relu_inplace(st.hidden[1]);
    return conv_[2].forward(st.hidden[1], st.cache[2]);
  }

  /// Accumulates parameter gradients and returns d(loss)/d(input).
  Tensor<T> backward(const Tensor<T>& dlogits, DiscriminatorState<T>& st) {
    Tensor<T> g = conv_[2].backward(dlogits, st.cache[2]);
    nn::relu_backward_inplace(g, st.hidden[1]);
    g = conv_[1].backward(g, st.cache[1]);
    nn::relu_backward_inplace(g, st.hidden[0]);
    return conv_[0].backward(g, st.cache[0]);
  }

  std::vector<nn::Param<T>*> params() {
    std::vector<nn::Param<T>*> out;
    for (auto& c : conv_)
      for (auto* p : c.params()) out.push_back(p);
    return out;
  }

 private:
  int in_c_ = 0;
  std::array<nn::Conv2d<T>, 3> conv_;
};

template <typename T>
Tensor<T> discriminator_forward(const Discriminator<T>& d, const Tensor<T>& features) {
  DiscriminatorState<T> st;
  return d.forward(features, st);
}

/// Per-location softmax over the class axis.
template <typename T>
Tensor<T> domain_softmax(const Tensor<T>& logits) {
  Tensor<T> p(logits.n, logits.c, logits.h, logits.w);
  const std::size_t plane = logits.plane();
  for (int i = 0; i < logits.n; ++i)
    for (std::size_t loc = 0; loc < plane; ++loc) {
      const T* in = logits.image(i) + loc;
      T* out = p.image(i) + loc;
      T mx = in[0];
      for (int k = 1; k < logits.c; ++k) mx = std::max(mx, in[k * plane]);
      T sum = 0;
      for (int k = 0; k < logits.c; ++k) {
        out[k * plane] = std::exp(in[k * plane] - mx);
        sum += out[k * plane];
      }
      for (int k = 0; k < logits.c; ++k) out[k * plane] /= sum;
    }
  return p;
}

template <typename T>
struct DomainLoss {
  double value = 0.0;
  Tensor<T> grad;  // d(value)/d(logits)
  /// Fraction of locations whose argmax equals the true class.
  double accuracy = 0.0;
};

/// Mean cross-entropy over every image and location; image i is labeled
/// `domain_classes[i]`.
template <typename T>
DomainLoss<T> domain_loss(const Tensor<T>& logits, const std::vector<int>& domain_classes) {
  if (static_cast<int>(domain_classes.size()) != logits.n)
    throw ShapeError("domain_loss: one domain id per image required");
  for (int d : domain_classes)
    if (d < 0 || d >= logits.c)
      throw ValidationError("domain id " + std::to_string(d) + " outside [0, " +
                            std::to_string(logits.c) + ")");
  nn::check_finite(logits, "domain logits");
  DomainLoss<T> out;
  out.grad = Tensor<T>(logits.n, logits.c, logits.h, logits.w);
  const std::size_t plane = logits.plane();
  const double count = static_cast<double>(logits.n) * plane;
  double total = 0.0;
  std::size_t correct = 0;
  for (int i = 0; i < logits.n; ++i) {
    const int y = domain_classes[i];
    for (std::size_t loc = 0; loc < plane; ++loc) {
      const T* in = logits.image(i) + loc;
      T* g = out.grad.image(i) + loc;
      double mx = in[0];
      int argmax = 0;
      for (int k = 1; k < logits.c; ++k)
        if (in[k * plane] > mx) {
          mx = in[k * plane];
          argmax = k;
        }
      correct += argmax == y;
      double sum = 0.0;
      for (int k = 0; k < logits.c; ++k) sum += std::exp(in[k * plane] - mx);
      const double log_z = mx + std::log(sum);
      total += log_z - in[y * plane];
      for (int k = 0; k < logits.c; ++k) {
        const double p = std::exp(in[k * plane] - log_z);
        g[k * plane] = static_cast<T>((p - (k == y ? 1.0 : 0.0)) / count);
      }
    }
  }
  out.value = total / count;
  out.accuracy = static_cast<double>(correct) / count;
  return out;
}

template <typename T>
DomainLoss<T> domain_loss(const Tensor<T>& logits, int true_domain_id) {
  return domain_loss(logits, std::vector<int>(logits.n, true_domain_id));
}

}  // namespace mda::adversarial
