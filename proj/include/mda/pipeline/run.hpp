#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mda/adversarial/objective.hpp"
#include "mda/adversarial/trainer.hpp"
#include "mda/core/benchmark.hpp"
#include "mda/core/coco.hpp"
#include "mda/eval/evaluate.hpp"
#include "mda/nn/checkpoint.hpp"
#include "mda/pipeline/config.hpp"
#include "mda/pixeladapt/translate.hpp"
#include "mda/selftrain/self_training.hpp"

namespace mda::pipeline {

namespace fs = std::filesystem;

struct StageRecord {
  std::string name;
  /// Relative to the run directory; empty when the stage wrote none.
  std::string checkpoint;
  std::string checkpoint_hash;
  std::optional<eval::EvalReport> report;
};

struct RunManifest {
  std::string name;
  /// "baseline", "oracle", "mda", "mda+st", or a free-form label.
  std::string kind;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string version = kVersion;
  /// "complete" or "partial".
  std::string status = "complete";
  std::string error;
  std::string output_dir;
  std::vector<StageRecord> stages;
  std::int64_t sealed_label_reads = 0;

  const StageRecord* find(const std::string& stage) const {
    for (const auto& s : stages)
      if (s.name == stage) return &s;
    return nullptr;
  }
  /// Report of the last evaluated stage.
  const eval::EvalReport* final_report() const {
    for (auto it = stages.rbegin(); it != stages.rend(); ++it)
      if (it->report) return &*it->report;
    return nullptr;
  }
  std::string last_checkpoint() const {
    for (auto it = stages.rbegin(); it != stages.rend(); ++it)
      if (!it->checkpoint.empty()) return it->checkpoint;
    return {};
  }
};

inline nlohmann::json to_json(const RunManifest& m) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : m.stages) {
    nlohmann::json j = {{"name", s.name},
                        {"checkpoint", s.checkpoint},
                        {"checkpoint_hash", s.checkpoint_hash}};
    if (s.report) j["eval"] = *s.report;
    stages.push_back(j);
  }
  return {{"name", m.name},       {"kind", m.kind},
          {"config", m.config},   {"seed", m.seed},
          {"version", m.version}, {"status", m.status},
          {"error", m.error},     {"output_dir", m.output_dir},
          {"stages", stages},     {"sealed_label_reads", m.sealed_label_reads}};
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.name = j.at("name");
    m.kind = j.value("kind", std::string());
    m.config = j.value("config", nlohmann::json::object());
    m.seed = j.value("seed", std::uint64_t{0});
    m.version = j.value("version", std::string());
    m.status = j.value("status", std::string("complete"));
    m.error = j.value("error", std::string());
    m.output_dir = j.value("output_dir", std::string());
    m.sealed_label_reads = j.value("sealed_label_reads", std::int64_t{0});
    for (const auto& s : j.at("stages")) {
      StageRecord r;
      r.name = s.at("name");
      r.checkpoint = s.value("checkpoint", std::string());
      r.checkpoint_hash = s.value("checkpoint_hash", std::string());
      if (s.contains("eval")) r.report = s["eval"].get<eval::EvalReport>();
      m.stages.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("bad run manifest: ") + e.what());
  }
  return m;
}

inline RunManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("cannot parse manifest " + path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << text;
}

/// Drops stages whose checkpoint is missing on disk so the manifest never
/// points at absent artifacts.
inline void write_manifest(const fs::path& dir, RunManifest& m) {
  for (auto& s : m.stages)
    if (!s.checkpoint.empty() && !fs::exists(dir / s.checkpoint)) {
      s.checkpoint.clear();
      s.checkpoint_hash.clear();
    }
  m.sealed_label_reads = sealed_label_reads().load();
  write_text(dir / "manifest.json", to_json(m).dump(1) + "\n");
}

inline void write_report(const fs::path& dir, const std::string& stem, const eval::EvalReport& r) {
  write_text(dir / (stem + ".txt"), r.to_text());
  write_text(dir / (stem + ".json"), nlohmann::json(r).dump(1) + "\n");
}

inline std::string save_model(const fs::path& dir, const std::string& file,
                              adversarial::MdaModel<float>& model,
                              const nn::Adam<float>& optimizer, const Rng& rng,
                              std::int64_t iteration) {
  nn::save_checkpoint((dir / file).string(), model.params(), optimizer, rng, iteration);
  return nn::hex64(nn::param_hash(model.params()));
}

}  // namespace detail

/// Loads or generates the benchmark named by the config.
inline std::vector<DomainDataset> load_datasets(const ExperimentConfig& c) {
  if (!c.benchmark_dir.empty()) return load_benchmark(c.benchmark_dir).second;
  return generate_toy_benchmark(c.benchmark, c.resolved_benchmark_seed());
}

inline eval::EvalReport evaluate_model(const adversarial::MdaModel<float>& model,
                                       const std::vector<DomainDataset>& datasets,
                                       const ExperimentConfig& c) {
  return eval::evaluate(model.detector(), datasets, c.iou_threshold, c.eval.score_floor,
                        c.eval.nms_iou);
}

/// Stage 1. Returns the datasets with the source train split replaced by S'.
inline std::vector<DomainDataset> run_pixel_stage(const ExperimentConfig& c,
                                                  std::vector<DomainDataset> datasets,
                                                  const fs::path& out_dir) {
  if (c.stage1 == PixelStage::kOff) return datasets;
  auto& source = datasets.at(0);
  if (c.stage1 == PixelStage::kExternal) {
    source = pixeladapt::load_external_translation(c.external_translation_dir, source);
    return datasets;
  }
  std::vector<const DomainDataset*> targets;
  for (const auto& ds : datasets)
    if (ds.spec.role == DomainRole::kTarget && c.composition.count(ds.spec.domain_id) &&
        c.composition.at(ds.spec.domain_id) > 0)
      targets.push_back(&ds);
  const auto translator = pixeladapt::fit_reference_translator(source, targets);
  pixeladapt::save_stats(out_dir / "stage1_stats.txt", translator);
  source = pixeladapt::translate_dataset(source, translator);
  return datasets;
}

/// Runs the enabled stages in order, writing checkpoints, logs, per-round
/// pseudo-label dumps, evaluation reports and manifest.json into the output
/// directory. A failure after startup leaves a manifest marked partial.
inline RunManifest run_pipeline(const ExperimentConfig& config, std::ostream* progress = nullptr) {
  validate(config);
  const fs::path dir = resolve_output_dir(config);
  fs::create_directories(dir);

  RunManifest manifest;
  manifest.name = config.name;
  manifest.kind = config.stage3 ? "mda+st" : (config.stage2 ? "mda" : "pixel");
  manifest.config = config_to_json(config);
  manifest.seed = config.seed;
  manifest.output_dir = dir.string();

  std::optional<RunManifest> previous;
  if (config.resume && fs::exists(dir / "manifest.json")) previous = load_manifest(dir / "manifest.json");

  try {
    detail::write_text(dir / "config.json", manifest.config.dump(1) + "\n");
    auto datasets = load_datasets(config);
    datasets = run_pixel_stage(config, std::move(datasets), dir);
    if (config.stage1 != PixelStage::kOff)
      manifest.stages.push_back({"stage1", "", "", std::nullopt});
    if (config.stop_after == "stage1") {
      manifest.status = "partial";
      detail::write_manifest(dir, manifest);
      return manifest;
    }

    Rng rng(config.seed);
    adversarial::MdaModel<float> model(config.detector, config.discriminator);
    model.init(rng);

    const StageRecord* resumed = previous ? previous->find("stage2") : nullptr;
    if (resumed != nullptr && !resumed->checkpoint.empty()) {
      nn::load_checkpoint((dir / resumed->checkpoint).string(), model.params(),
                          static_cast<nn::Adam<float>*>(nullptr), &rng);
      manifest.stages.push_back(*resumed);
      if (progress) *progress << "resumed after stage 2 from " << resumed->checkpoint << "\n";
    } else if (config.stage2) {
      std::ofstream log(dir / "stage2_log.jsonl");
      auto domains = adversarial::adaptation_domains(datasets, config.composition,
                                                     config.discriminator);
      adversarial::Trainer trainer(model, std::move(domains), config.train, rng, &log);
      trainer.run([&](const adversarial::StepRecord& r) {
        if (progress && (r.iteration + 1) % 500 == 0)
          *progress << "stage2 iteration " << r.iteration + 1 << " l_class "
                    << r.value.detection.l_class << " l_box " << r.value.detection.l_box
                    << " l_d " << r.value.l_d << " lambda " << r.value.lambda << "\n";
      });
      StageRecord rec{"stage2", "stage2.ckpt", "", std::nullopt};
      rec.checkpoint_hash = detail::save_model(dir, rec.checkpoint, model, trainer.optimizer(),
                                               rng, trainer.iteration());
      rec.report = evaluate_model(model, datasets, config);
      detail::write_report(dir, "eval_stage2", *rec.report);
      manifest.stages.push_back(std::move(rec));
    } else if (!config.init_checkpoint.empty()) {
      nn::load_checkpoint(config.init_checkpoint, model.params());
    }
    if (config.stop_after == "stage2") {
      manifest.status = "partial";
      detail::write_manifest(dir, manifest);
      return manifest;
    }

    if (config.stage3) {
      auto st = config.self_train;
      st.composition = config.composition;
      std::ofstream log(dir / "stage3_log.jsonl");
      std::ofstream rounds(dir / "rounds.jsonl");
      selftrain::SelfTrainHooks hooks;
      hooks.train_log = &log;
      hooks.warnings = progress ? progress : &std::cerr;
      hooks.on_labels = [&](const selftrain::RoundSummary& r) {
        // Pseudo labels as annotation documents, one per target and round.
        std::vector<DomainDataset> targets;
        for (const auto& ds : datasets)
          if (ds.spec.role == DomainRole::kTarget && st.composition.count(ds.spec.domain_id))
            targets.push_back(ds);
        for (auto& t : targets) {
          t.test.clear();
          std::vector<ImageSample> labeled;
          for (const auto& rec : r.records)
            if (rec.domain_id == t.spec.domain_id)
              for (const auto& s : t.train)
                if (s.image_id() == rec.image_id) labeled.push_back(s.with_labels(rec.annotations));
          t.train = std::move(labeled);
          CocoWriteOptions opt;
          opt.write_pixels = false;
          opt.image_dir = t.spec.name;
          opt.num_classes = config.detector.num_classes;
          write_annotations(t, dir / ("pseudo_round" + std::to_string(r.round_index) + "_" +
                                      t.spec.name + ".json"),
                            opt);
        }
      };
      hooks.on_round = [&](const selftrain::RoundSummary& r, adversarial::MdaModel<float>& m) {
        StageRecord rec{"stage3_round" + std::to_string(r.round_index),
                        "stage3_round" + std::to_string(r.round_index) + ".ckpt", "",
                        std::nullopt};
        rec.checkpoint_hash =
            detail::save_model(dir, rec.checkpoint, m, nn::Adam<float>{}, rng, 0);
        rec.report = evaluate_model(m, datasets, config);
        detail::write_report(dir, "eval_" + rec.name, *rec.report);
        auto line = selftrain::round_to_json(r);
        nlohmann::json maps = nlohmann::json::object();
        for (const auto& d : rec.report->domains) maps[d.name] = d.map;
        line["eval_map"] = maps;
        rounds << line.dump() << "\n" << std::flush;
        if (progress)
          *progress << "stage3 round " << r.round_index << " threshold " << r.threshold
                    << " boxes " << r.total_boxes << "\n";
        manifest.stages.push_back(std::move(rec));
      };
      selftrain::self_training_loop(model, datasets, st, rng, hooks);
    }
    if (!manifest.final_report()) {
      StageRecord rec{"final", "", "", evaluate_model(model, datasets, config)};
      manifest.stages.push_back(std::move(rec));
    }
    detail::write_report(dir, "eval_final", *manifest.final_report());
    manifest.status = "complete";
    detail::write_manifest(dir, manifest);
  } catch (const std::exception& e) {
    manifest.status = "partial";
    manifest.error = e.what();
    detail::write_manifest(dir, manifest);
    throw;
  }
  return manifest;
}

/// Plain detector training without discriminator or self-training. With
/// `oracle_domain` >= 0 the model trains on that target's train labels
/// instead, which must be unlocked explicitly.
inline RunManifest train_baseline(const ExperimentConfig& config, int oracle_domain = -1,
                                  bool unlock_target_labels = false,
                                  std::ostream* progress = nullptr) {
  if (oracle_domain >= 0 && !unlock_target_labels)
    throw ValidationError("oracle training reads target train labels; pass the unlock flag");
  ExperimentConfig c = config;
  c.stage2 = c.stage3 = false;
  validate(c);
  const fs::path dir = resolve_output_dir(c);
  fs::create_directories(dir);
  RunManifest manifest;
  manifest.name = c.name;
  manifest.kind = oracle_domain >= 0 ? "oracle" : "baseline";
  manifest.config = config_to_json(c);
  manifest.config["oracle_domain"] = oracle_domain;
  manifest.seed = c.seed;
  manifest.output_dir = dir.string();
  try {
    detail::write_text(dir / "config.json", manifest.config.dump(1) + "\n");
    auto datasets = run_pixel_stage(c, load_datasets(c), dir);
    Rng rng(c.seed);
    adversarial::MdaModel<float> model(c.detector, c.discriminator, false);
    model.init(rng);
    adversarial::TrainDomain d;
    const DomainDataset* pool = nullptr;
    for (const auto& ds : datasets)
      if (ds.spec.domain_id == (oracle_domain >= 0 ? oracle_domain : 0)) pool = &ds;
    if (pool == nullptr)
      throw ConfigError("no domain with id " + std::to_string(oracle_domain));
    d.domain_id = pool->spec.domain_id;
    d.name = pool->spec.name;
    d.count = c.composition.at(0);
    d.labeled = true;
    for (const auto& s : pool->train) d.pool.push_back(oracle_domain >= 0 ? s.unsealed() : s);
    std::ofstream log(dir / "baseline_log.jsonl");
    adversarial::TrainConfig tc = c.train;
    tc.stage = manifest.kind;
    adversarial::Trainer trainer(model, {std::move(d)}, tc, rng, &log);
    trainer.run([&](const adversarial::StepRecord& r) {
      if (progress && (r.iteration + 1) % 500 == 0)
        *progress << manifest.kind << " iteration " << r.iteration + 1 << " loss "
                  << r.value.detection.total() << "\n";
    });
    StageRecord rec{manifest.kind, manifest.kind + ".ckpt", "", std::nullopt};
    rec.checkpoint_hash = detail::save_model(dir, rec.checkpoint, model, trainer.optimizer(), rng,
                                             trainer.iteration());
    rec.report = evaluate_model(model, datasets, c);
    detail::write_report(dir, "eval_final", *rec.report);
    manifest.stages.push_back(std::move(rec));
    detail::write_manifest(dir, manifest);
  } catch (const std::exception& e) {
    manifest.status = "partial";
    manifest.error = e.what();
    detail::write_manifest(dir, manifest);
    throw;
  }
  return manifest;
}

}  // namespace mda::pipeline
