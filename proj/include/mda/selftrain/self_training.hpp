#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mda/adversarial/schedule.hpp"
#include "mda/adversarial/trainer.hpp"
#include "mda/core/types.hpp"
#include "mda/detector/infer.hpp"
#include "mda/nn/checkpoint.hpp"
#include "mda/selftrain/threshold.hpp"

namespace mda::selftrain {

struct PseudoLabelRecord {
  int domain_id = 0;
  int image_id = 0;
  std::vector<Annotation> annotations;
  /// Detections below the threshold but above the uncertainty floor; their
  /// anchors are left out of the loss instead of being taught background.
  std::vector<BoundingBox> uncertain;
  double threshold = 0.0;
  int round_index = 0;
};

/// One record per target train image, from post-NMS detections of `model`.
/// Only pixels are read; the images' own labels are never touched.
template <typename T>
std::vector<PseudoLabelRecord> generate_pseudo_labels(
    const detector::Detector<T>& model, const std::vector<const DomainDataset*>& targets,
    double t, int round_index = 0, const detector::InferConfig& infer = {},
    double uncertain_floor = 1.0) {
  if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("threshold must lie in [0, 1]");
  std::vector<PseudoLabelRecord> out;
  for (const auto* ds : targets) {
    std::vector<const Image*> images;
    for (const auto& s : ds->train) images.push_back(&s.pixels());
    const auto dets = detector::infer_batch(model, images, infer);
    for (std::size_t i = 0; i < ds->train.size(); ++i) {
      PseudoLabelRecord r{ds->spec.domain_id, ds->train[i].image_id(),
                          filter_detections(dets[i], t), {}, t, round_index};
      for (const auto& d : dets[i])
        if (d.score < t && d.score >= uncertain_floor) r.uncertain.push_back(d.box);
      out.push_back(std::move(r));
    }
  }
  return out;
}

/// Target train splits with the pseudo labels attached (images without a
/// record keep their original state). Uncertain boxes ride along as
/// annotations with class_id -1, which the detection loss reads as ignore
/// regions.
inline std::vector<DomainDataset> apply_pseudo_labels(const std::vector<DomainDataset>& targets,
                                                      const std::vector<PseudoLabelRecord>& records) {
  std::map<std::pair<int, int>, const PseudoLabelRecord*> index;
  for (const auto& r : records) index[{r.domain_id, r.image_id}] = &r;
  std::vector<DomainDataset> out = targets;
  for (auto& ds : out)
    for (auto& s : ds.train) {
      auto it = index.find({ds.spec.domain_id, s.image_id()});
      if (it == index.end()) continue;
      auto labels = it->second->annotations;
      for (const auto& b : it->second->uncertain) labels.push_back({b, -1});
      s = s.with_labels(std::move(labels));
    }
  return out;
}

struct SelfTrainConfig {
  ThresholdSchedule schedule;
  int round_iterations = 500;
  /// Per-round optimizer settings; `iterations` is replaced by
  /// round_iterations and the reversal weight is held at its end-of-stage-2
  /// value.
  adversarial::TrainConfig train;
  BatchComposition composition = {{0, 4}, {1, 2}, {2, 2}};
  bool adversarial = true;
  /// Re-initialize the model before each round instead of fine-tuning.
  bool reinit = false;
  /// Train on pseudo-labeled targets only (source dropped from batches).
  bool pseudo_only = false;
  /// Detections scoring in [uncertain_floor, threshold) become ignore
  /// regions on pseudo-labeled images; 1 disables.
  double uncertain_floor = 0.2;
  detector::InferConfig infer;
};

inline SelfTrainConfig default_self_train_config() {
  SelfTrainConfig c;
  c.train.base_lr = 2e-4;
  c.train.lr_decay_fraction = 1.0;
  c.train.stage = "stage3";
  return c;
}

struct RoundSummary {
  int round_index = 0;
  double threshold = 0.0;
  /// Hash of the parameters that produced this round's pseudo labels.
  std::string model_hash;
  std::map<int, int> boxes_per_domain;
  std::map<int, int> labeled_images_per_domain;
  int total_boxes = 0;
  std::vector<PseudoLabelRecord> records;
};

inline nlohmann::json round_to_json(const RoundSummary& r) {
  nlohmann::json boxes = nlohmann::json::object(), images = nlohmann::json::object();
  for (const auto& [d, n] : r.boxes_per_domain) boxes[std::to_string(d)] = n;
  for (const auto& [d, n] : r.labeled_images_per_domain) images[std::to_string(d)] = n;
  return {{"round", r.round_index},       {"threshold", r.threshold},
          {"model_hash", r.model_hash},   {"boxes", boxes},
          {"images_with_boxes", images},  {"total_boxes", r.total_boxes}};
}

struct SelfTrainHooks {
  /// Called after pseudo labels are generated, before training.
  std::function<void(const RoundSummary&)> on_labels;
  /// Called after the round's training.
  std::function<void(const RoundSummary&, adversarial::MdaModel<float>&)> on_round;
  std::ostream* train_log = nullptr;
  std::ostream* warnings = nullptr;
};

/// Iterative self-training: for each threshold, pseudo-label every target
/// train image with the current model, then train on source plus the
/// pseudo-labeled targets. Targets whose images all came out empty stay in
/// the batch unlabeled so the discriminator still sees them.
inline std::vector<RoundSummary> self_training_loop(adversarial::MdaModel<float>& model,
                                                    const std::vector<DomainDataset>& datasets,
                                                    const SelfTrainConfig& config, Rng& rng,
                                                    const SelfTrainHooks& hooks = {}) {
  validate(config.schedule);
  if (config.round_iterations < 0) throw ConfigError("round_iterations must be >= 0");
  validate(config.infer);
  validate_domains(datasets);
  std::vector<DomainDataset> targets;
  std::vector<const DomainDataset*> target_ptrs;
  for (const auto& ds : datasets)
    if (ds.spec.role == DomainRole::kTarget && config.composition.count(ds.spec.domain_id) &&
        config.composition.at(ds.spec.domain_id) > 0)
      targets.push_back(ds);
  for (const auto& t : targets) target_ptrs.push_back(&t);

  std::vector<RoundSummary> rounds;
  const auto thresholds = config.schedule.values();
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    RoundSummary summary;
    summary.round_index = static_cast<int>(k);
    summary.threshold = thresholds[k];
    summary.model_hash = nn::hex64(nn::param_hash(model.detector_params()));
    summary.records = generate_pseudo_labels(model.detector(), target_ptrs, thresholds[k],
                                             summary.round_index, config.infer,
                                             config.uncertain_floor);
    for (const auto& r : summary.records) {
      summary.boxes_per_domain[r.domain_id] += static_cast<int>(r.annotations.size());
      summary.labeled_images_per_domain[r.domain_id] += r.annotations.empty() ? 0 : 1;
      summary.total_boxes += static_cast<int>(r.annotations.size());
    }
    if (summary.total_boxes == 0 && hooks.warnings != nullptr)
      *hooks.warnings << "warning: self-training round " << k << " at threshold "
                      << thresholds[k] << " promoted no boxes; training on source only\n";
    if (hooks.on_labels) hooks.on_labels(summary);

    if (config.reinit) model.init(rng);
    auto domains = adversarial::adaptation_domains(datasets, config.composition,
                                                   model.disc_config());
    const auto labeled_targets = apply_pseudo_labels(targets, summary.records);
    for (auto& d : domains) {
      if (d.labeled) {
        if (config.pseudo_only) d.count = 0;
        continue;
      }
      const DomainDataset* pl = nullptr;
      for (const auto& t : labeled_targets)
        if (t.spec.domain_id == d.domain_id) pl = &t;
      if (pl == nullptr || summary.labeled_images_per_domain[d.domain_id] == 0) continue;
      std::vector<ImageSample> pool;
      for (const auto& s : pl->train)
        if (s.has_labels() && std::any_of(s.annotations().begin(), s.annotations().end(),
                                          [](const Annotation& a) { return a.class_id >= 0; }))
          pool.push_back(s);
      d.pool = std::move(pool);
      d.labeled = true;
    }

    adversarial::TrainConfig tc = config.train;
    tc.iterations = config.round_iterations;
    tc.domain_loss = config.adversarial;
    tc.lambda_mode = adversarial::LambdaMode::kConstant;
    tc.lambda_constant = adversarial::lambda_schedule(1.0, config.train.lambda_gamma);
    if (tc.stage.empty()) tc.stage = "stage3";
    adversarial::Trainer trainer(model, std::move(domains), tc, rng, hooks.train_log);
    trainer.run();
    if (hooks.on_round) hooks.on_round(summary, model);
    rounds.push_back(std::move(summary));
  }
  return rounds;
}

}  // namespace mda::selftrain
