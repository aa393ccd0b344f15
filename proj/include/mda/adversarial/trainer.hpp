#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mda/adversarial/objective.hpp"
#include "mda/adversarial/schedule.hpp"
#include "mda/core/batch.hpp"
#include "mda/core/transforms.hpp"
#include "mda/core/types.hpp"
#include "mda/detector/model.hpp"
#include "mda/nn/adam.hpp"

namespace mda::adversarial {

enum class LambdaMode { kSchedule, kConstant };

struct TrainConfig {
  int iterations = 2000;
  double base_lr = 1e-3;
  /// Learning rate is multiplied by lr_decay_factor from iteration
  /// floor(lr_decay_fraction * iterations) on.
  double lr_decay_fraction = 0.75;
  double lr_decay_factor = 0.1;
  nn::AdamConfig adam;
  detector::LossConfig loss;
  AugmentConfig augment;
  /// Off: discriminators are neither trained nor fed back to the backbone.
  bool domain_loss = true;
  LambdaMode lambda_mode = LambdaMode::kSchedule;
  double lambda_constant = 1.0;
  double lambda_gamma = 10.0;
  std::string stage = "stage2";

  double learning_rate(int iteration) const {
    const int decay_at = static_cast<int>(lr_decay_fraction * iterations);
    return iteration >= decay_at ? base_lr * lr_decay_factor : base_lr;
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"iterations", c.iterations},
       {"base_lr", c.base_lr},
       {"lr_decay_fraction", c.lr_decay_fraction},
       {"lr_decay_factor", c.lr_decay_factor},
       {"weight_decay", c.adam.weight_decay},
       {"clip_norm", c.adam.clip_norm},
       {"lambda_gamma", c.lambda_gamma},
       {"flip", c.augment.horizontal_flip},
       {"max_shift", c.augment.max_shift}};
}

/// Keys absent from `j` keep the values already in `c`.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.iterations = j.value("iterations", c.iterations);
  c.base_lr = j.value("base_lr", c.base_lr);
  c.lr_decay_fraction = j.value("lr_decay_fraction", c.lr_decay_fraction);
  c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
  c.adam.weight_decay = j.value("weight_decay", c.adam.weight_decay);
  c.adam.clip_norm = j.value("clip_norm", c.adam.clip_norm);
  c.lambda_gamma = j.value("lambda_gamma", c.lambda_gamma);
  c.augment.horizontal_flip = j.value("flip", c.augment.horizontal_flip);
  c.augment.max_shift = j.value("max_shift", c.augment.max_shift);
}

/// One domain's contribution to every batch.
struct TrainDomain {
  int domain_id = 0;
  std::string name;
  /// Label fed to the discriminator.
  int domain_class = 0;
  int count = 0;
  /// Whether the pool's annotations feed the detection loss.
  bool labeled = false;
  std::vector<ImageSample> pool;
};

struct StepRecord {
  std::string stage;
  int iteration = 0;
  ObjectiveValue value;
  double lr = 0.0;
  int images = 0;
  int labeled_images = 0;
};

inline nlohmann::json to_log_json(const StepRecord& r, const std::vector<Level>& levels) {
  nlohmann::json ld = nlohmann::json::object();
  for (std::size_t k = 0; k < r.value.domain_losses.size(); ++k)
    ld[detector::level_name(levels[k])] = r.value.domain_losses[k];
  return {{"stage", r.stage},
          {"iteration", r.iteration},
          {"l_class", r.value.detection.l_class},
          {"l_box", r.value.detection.l_box},
          {"l_d", ld},
          {"lambda", r.value.lambda},
          {"lr", r.lr}};
}

/// Stochastic training of an MdaModel over mixed-domain batches. Labeled
/// domains are placed first in each batch so the detection heads run on a
/// prefix of it.
class Trainer {
 public:
  using Model = MdaModel<float>;

  Trainer(Model& model, std::vector<TrainDomain> domains, TrainConfig config, Rng& rng,
          std::ostream* log = nullptr)
      : model_(model), config_(std::move(config)), rng_(rng), log_(log),
        optimizer_(config_.adam) {
    for (auto& d : domains) {
      if (d.count <= 0) continue;
      if (d.pool.empty())
        throw ConfigError("empty train split for domain '" + d.name + "'");
      DomainDataset ds;
      ds.spec.domain_id = d.domain_id;
      ds.spec.name = d.name;
      ds.train = std::move(d.pool);
      composition_[d.domain_id] = d.count;
      meta_.push_back({d.domain_id, d.domain_class, d.labeled});
      pools_.push_back(std::move(ds));
    }
    if (pools_.empty()) throw ConfigError("training needs at least one domain");
  }

  int iteration() const { return iteration_; }
  /// For resuming: the next step() runs as iteration `it`.
  void set_iteration(int it) { iteration_ = it; }
  nn::Adam<float>& optimizer() { return optimizer_; }
  const TrainConfig& config() const { return config_; }

  double current_lambda() const {
    if (!model_.adversarial() || !config_.domain_loss) return 0.0;
    if (config_.lambda_mode == LambdaMode::kConstant) return config_.lambda_constant;
    const double progress =
        config_.iterations > 0 ? static_cast<double>(iteration_) / config_.iterations : 1.0;
    return lambda_schedule(std::min(progress, 1.0), config_.lambda_gamma);
  }

  StepRecord step() {
    MultiDomainBatch batch = build_batch(pools_, composition_, rng_);
    std::vector<const ImageSample*> ordered;
    std::vector<int> classes;
    int labeled = 0;
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& m : meta_) {
        if (m.labeled != (pass == 0)) continue;
        for (const auto& s : batch.per_domain.at(m.domain_id)) {
          ordered.push_back(&s);
          classes.push_back(m.domain_class);
          labeled += m.labeled;
        }
      }
    std::vector<Image> pixels;
    std::vector<std::vector<Annotation>> labels(labeled);
    pixels.reserve(ordered.size());
    for (std::size_t i = 0; i < ordered.size(); ++i) {
      pixels.push_back(ordered[i]->pixels());
      std::vector<Annotation>* anns = nullptr;
      if (static_cast<int>(i) < labeled) {
        labels[i] = ordered[i]->annotations();
        anns = &labels[i];
      }
      if (config_.augment.enabled()) augment_sample(config_.augment, pixels.back(), anns, rng_);
    }
    ObjectiveBatch<float> ob;
    std::vector<const Image*> images;
    for (const auto& p : pixels) images.push_back(&p);
    ob.images = detector::images_to_tensor<float>(images, model_.detector().config());
    ob.labeled = labeled;
    for (const auto& l : labels) ob.labels.push_back(&l);
    ob.domain_classes = std::move(classes);

    StepRecord rec;
    rec.stage = config_.stage;
    rec.iteration = iteration_;
    rec.lr = config_.learning_rate(iteration_);
    rec.images = static_cast<int>(ordered.size());
    rec.labeled_images = labeled;
    const double lambda = current_lambda();
    model_.zero_grad();
    rec.value = evaluate_objective(model_, ob, lambda, true, config_.loss,
                                   config_.domain_loss);
    optimizer_.step(model_.params(), rec.lr);
    ++iteration_;
    if (log_ != nullptr)
      *log_ << to_log_json(rec, model_.disc_config().attachment_levels).dump() << "\n";
    return rec;
  }

  /// Runs until config().iterations steps have been taken in total.
  void run(const std::function<void(const StepRecord&)>& on_step = {}) {
    while (iteration_ < config_.iterations) {
      const StepRecord r = step();
      if (on_step) on_step(r);
    }
  }

 private:
  struct DomainMeta {
    int domain_id;
    int domain_class;
    bool labeled;
  };

  Model& model_;
  TrainConfig config_;
  Rng& rng_;
  std::ostream* log_;
  nn::Adam<float> optimizer_;
  std::vector<DomainDataset> pools_;
  std::vector<DomainMeta> meta_;
  BatchComposition composition_;
  int iteration_ = 0;
};

/// Source domain first (labeled), then each target (unlabeled) in order.
inline std::vector<TrainDomain> adaptation_domains(const std::vector<DomainDataset>& datasets,
                                                   const BatchComposition& composition,
                                                   const DiscriminatorConfig& disc) {
  validate_domains(datasets);
  std::vector<TrainDomain> out;
  int position = 1;
  for (const auto& ds : datasets) {
    const bool is_source = ds.spec.role == DomainRole::kSource;
    auto it = composition.find(ds.spec.domain_id);
    if (it == composition.end() || it->second == 0) {
      if (is_source) throw ConfigError("batch composition must include the source domain");
      continue;
    }
    TrainDomain d;
    d.domain_id = ds.spec.domain_id;
    d.name = ds.spec.name;
    d.domain_class = disc.domain_class(is_source ? 0 : position++);
    d.count = it->second;
    d.labeled = is_source;
    d.pool = ds.train;
    out.push_back(std::move(d));
  }
  std::sort(out.begin(), out.end(), [](const TrainDomain& a, const TrainDomain& b) {
    return a.domain_class < b.domain_class || (a.domain_class == b.domain_class && a.domain_id < b.domain_id);
  });
  return out;
}

/// Stage 2: adversarial feature alignment. Detection loss on the source
/// sub-batch, domain loss on all sub-batches through the reversal layer.
inline MdaModel<float> train_feature_alignment(const std::vector<DomainDataset>& datasets,
                                               const detector::DetectorConfig& det_config,
                                               const DiscriminatorConfig& disc_config,
                                               const BatchComposition& composition,
                                               const TrainConfig& config, Rng& rng,
                                               std::ostream* log = nullptr) {
  int num_targets = 0;
  for (const auto& ds : datasets)
    if (ds.spec.role == DomainRole::kTarget && composition.count(ds.spec.domain_id) &&
        composition.at(ds.spec.domain_id) > 0)
      ++num_targets;
  validate(disc_config, num_targets);
  MdaModel<float> model(det_config, disc_config);
  model.init(rng);
  auto domains = adaptation_domains(datasets, composition, disc_config);
  Trainer trainer(model, std::move(domains), config, rng, log);
  trainer.run();
  return model;
}

}  // namespace mda::adversarial
