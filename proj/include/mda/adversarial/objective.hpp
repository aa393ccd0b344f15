#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "mda/adversarial/discriminator.hpp"
#include "mda/adversarial/grl.hpp"
#include "mda/adversarial/schedule.hpp"
#include "mda/detector/loss.hpp"
#include "mda/detector/model.hpp"

namespace mda::adversarial {

/// A detector with domain discriminators attached at configured levels.
template <typename T>
class MdaModel {
 public:
  MdaModel() = default;
  MdaModel(detector::DetectorConfig det_config, DiscriminatorConfig disc_config,
           bool with_discriminators = true)
      : detector_(det_config), disc_config_(std::move(disc_config)) {
    if (!with_discriminators) {
      disc_config_.attachment_levels.clear();
      return;
    }
    for (Level l : disc_config_.attachment_levels) {
      const int width = det_config.channels(l);
      const int hidden = disc_config_.hidden_channels > 0 ? disc_config_.hidden_channels : width;
      discriminators_.emplace_back(std::string("disc.") + detector::level_name(l), width,
                                   hidden, disc_config_.num_domain_classes);
    }
  }

  template <typename Gen>
  void init(Gen& rng) {
    detector_.init(rng);
    for (auto& d : discriminators_) d.init(rng);
  }

  detector::Detector<T>& detector() { return detector_; }
  const detector::Detector<T>& detector() const { return detector_; }
  const DiscriminatorConfig& disc_config() const { return disc_config_; }
  std::vector<Discriminator<T>>& discriminators() { return discriminators_; }
  const std::vector<Discriminator<T>>& discriminators() const { return discriminators_; }
  bool adversarial() const { return !discriminators_.empty(); }

  std::vector<nn::Param<T>*> detector_params() { return detector_.params(); }
  std::vector<nn::Param<T>*> discriminator_params() {
    std::vector<nn::Param<T>*> out;
    for (auto& d : discriminators_)
      for (auto* p : d.params()) out.push_back(p);
    return out;
  }
  std::vector<nn::Param<T>*> params() {
    auto out = detector_params();
    for (auto* p : discriminator_params()) out.push_back(p);
    return out;
  }
  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

  template <typename U>
  void copy_from(MdaModel<U>& other) {
    auto mine = params();
    auto theirs = other.params();
    if (mine.size() != theirs.size()) throw ShapeError("copy_from: architecture mismatch");
    for (std::size_t i = 0; i < mine.size(); ++i)
      for (std::size_t j = 0; j < mine[i]->size(); ++j)
        mine[i]->value[j] = static_cast<T>(theirs[i]->value[j]);
  }

 private:
  detector::Detector<T> detector_;
  DiscriminatorConfig disc_config_;
  std::vector<Discriminator<T>> discriminators_;
};

/// Losses of one objective evaluation.
struct ObjectiveValue {
  detector::LossBundle detection;
  /// Domain loss per attachment level, in attachment order.
  std::vector<double> domain_losses;
  std::vector<double> domain_accuracy;
  /// Combined domain loss: loss_weight times the sum (or mean) over levels.
  double l_d = 0.0;
  double lambda = 0.0;
  int num_foreground = 0;

  /// L_class + L_box - lambda * L_D.
  double adversarial_total() const { return total_loss(detection, l_d, lambda); }
};

/// One batch for the objective. The first `labeled` images carry detection
/// labels; every image carries its discriminator class.
template <typename T>
struct ObjectiveBatch {
  nn::Tensor<T> images;
  int labeled = 0;
  std::vector<const std::vector<Annotation>*> labels;
  std::vector<int> domain_classes;
};

/// Evaluates the training objective and, when `accumulate_grads` is set,
/// adds its gradients to every parameter: detector heads and FPN receive
/// d(L_class + L_box); discriminators receive d(L_D); the backbone receives
/// d(L_class + L_box) - lambda * d(L_D) through the reversal layer.
template <typename T>
ObjectiveValue evaluate_objective(MdaModel<T>& model, const ObjectiveBatch<T>& batch,
                                  double lambda, bool accumulate_grads,
                                  const detector::LossConfig& loss_config = {},
                                  bool with_domain_loss = true) {
  ObjectiveValue value;
  value.lambda = lambda;
  auto& det = model.detector();
  detector::ForwardState<T> st;
  const auto outputs = det.forward(batch.images, st, batch.labeled);

  detector::DetectionLoss<T> dl;
  if (batch.labeled > 0) {
    const auto anchors = detector::make_anchors(batch.images.h, batch.images.w,
                                                det.config().anchors);
    dl = detector::compute_detection_loss(outputs, anchors, batch.labels, loss_config);
    value.detection = dl.bundle;
    value.num_foreground = dl.num_foreground;
  }

  std::array<nn::Tensor<T>, 6> extra;
  const auto& levels = model.disc_config().attachment_levels;
  const double level_weight =
      model.disc_config().loss_weight *
      ((model.disc_config().sum_over_levels || levels.empty()) ? 1.0 : 1.0 / levels.size());
  const std::size_t attached = with_domain_loss ? model.discriminators().size() : 0;
  for (std::size_t k = 0; k < attached; ++k) {
    const Level level = levels[k];
    const auto& features = st.pyramid.get(level);
    DiscriminatorState<T> ds;
    const auto logits = model.discriminators()[k].forward(grl_apply(features, lambda), ds);
    auto loss = domain_loss(logits, batch.domain_classes);
    value.domain_losses.push_back(loss.value);
    value.domain_accuracy.push_back(loss.accuracy);
    value.l_d += level_weight * loss.value;
    if (!accumulate_grads) continue;
    if (level_weight != 1.0)
      for (auto& g : loss.grad.data) g *= static_cast<T>(level_weight);
    const auto dfeat = model.discriminators()[k].backward(loss.grad, ds);
    auto reversed = GradientReversal<T>::backward(dfeat, lambda);
    auto& slot = extra[static_cast<int>(level)];
    if (slot.n == 0)
      slot = std::move(reversed);
    else
      nn::add_into(slot, reversed);
  }
  if (accumulate_grads)
    det.backward(st, batch.labeled > 0 ? &dl.dlogits : nullptr,
                 batch.labeled > 0 ? &dl.ddeltas : nullptr, extra);
  return value;
}

}  // namespace mda::adversarial
