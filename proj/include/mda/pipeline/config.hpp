#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "mda/adversarial/discriminator.hpp"
#include "mda/adversarial/trainer.hpp"
#include "mda/core/batch.hpp"
#include "mda/core/benchmark.hpp"
#include "mda/detector/infer.hpp"
#include "mda/detector/model.hpp"
#include "mda/errors.hpp"
#include "mda/selftrain/self_training.hpp"

namespace mda::pipeline {

inline constexpr const char* kVersion = "mda-toolkit 0.3.0";
/// Output-root override: relative output directories resolve against it.
inline constexpr const char* kOutputRootEnv = "MDA_OUTPUT_ROOT";

enum class PixelStage { kOff, kReference, kExternal };

inline const char* to_string(PixelStage s) {
  switch (s) {
    case PixelStage::kOff: return "off";
    case PixelStage::kReference: return "reference";
    case PixelStage::kExternal: return "external";
  }
  return "off";
}

inline PixelStage parse_pixel_stage(const std::string& s) {
  if (s == "off") return PixelStage::kOff;
  if (s == "reference") return PixelStage::kReference;
  if (s == "external") return PixelStage::kExternal;
  throw ConfigError("stage1 must be off, reference or external, got '" + s + "'");
}

struct ExperimentConfig {
  std::string name = "run";
  /// Existing benchmark directory; empty means generate from `benchmark`.
  std::string benchmark_dir;
  BenchmarkConfig benchmark;
  /// Seed of the generated benchmark; defaults to `seed`.
  std::optional<std::uint64_t> benchmark_seed;

  detector::DetectorConfig detector;
  adversarial::DiscriminatorConfig discriminator =
      adversarial::DiscriminatorConfig::for_targets(2);
  adversarial::TrainConfig train;
  BatchComposition composition = {{0, 4}, {1, 2}, {2, 2}};
  selftrain::SelfTrainConfig self_train = selftrain::default_self_train_config();

  PixelStage stage1 = PixelStage::kOff;
  bool stage2 = true;
  bool stage3 = false;
  /// Directory of externally translated source images (stage1 = external).
  std::string external_translation_dir;
  /// Model checkpoint to start stage 3 from when stage 2 is off.
  std::string init_checkpoint;
  /// Testing aid: stop cleanly after the named stage ("stage1" | "stage2").
  std::string stop_after;
  /// Pick up a previous run in the same directory after its stage 2.
  bool resume = false;

  std::uint64_t seed = 1;
  std::string output_dir = "runs/run";
  double iou_threshold = 0.5;
  detector::InferConfig eval;

  std::uint64_t resolved_benchmark_seed() const { return benchmark_seed.value_or(seed); }
};

inline void validate(const ExperimentConfig& c) {
  validate(c.benchmark);
  detector::validate(c.eval);
  if (!(c.iou_threshold > 0.0 && c.iou_threshold <= 1.0))
    throw ConfigError("iou_threshold must lie in (0, 1]");
  if (c.train.iterations < 0) throw ConfigError("iterations must be >= 0");
  if (!(c.train.base_lr > 0.0)) throw ConfigError("base_lr must be > 0");
  if (!(c.train.lr_decay_fraction >= 0.0 && c.train.lr_decay_fraction <= 1.0))
    throw ConfigError("lr_decay_fraction must lie in [0, 1]");
  if (!c.composition.count(0) || c.composition.at(0) <= 0)
    throw ConfigError("batch composition must include the source domain (id 0)");
  int targets = 0;
  for (const auto& [id, n] : c.composition) {
    if (n < 0) throw ConfigError("negative batch count for domain " + std::to_string(id));
    if (id != 0 && n > 0) ++targets;
  }
  if (c.stage2 || c.stage3) adversarial::validate(c.discriminator, targets);
  if (c.stage3) {
    selftrain::validate(c.self_train.schedule);
    if (c.self_train.round_iterations < 0) throw ConfigError("round_iterations must be >= 0");
    if (!c.stage2 && c.init_checkpoint.empty() && !c.resume)
      throw ConfigError("stage3 needs stage2 or an init_checkpoint");
  }
  if (c.stage1 == PixelStage::kExternal && c.external_translation_dir.empty())
    throw ConfigError("stage1 = external needs external_translation_dir");
  if (!c.stop_after.empty() && c.stop_after != "stage1" && c.stop_after != "stage2")
    throw ConfigError("stop_after must be stage1 or stage2");
  if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

/// Output directory with the environment override applied.
inline std::filesystem::path resolve_output_dir(const ExperimentConfig& c) {
  std::filesystem::path p(c.output_dir);
  if (p.is_relative())
    if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0')
      return std::filesystem::path(root) / p;
  return p;
}

inline nlohmann::json composition_to_json(const BatchComposition& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [id, n] : c) j[std::to_string(id)] = n;
  return j;
}

inline BatchComposition composition_from_json(const nlohmann::json& j) {
  BatchComposition c;
  for (const auto& [k, v] : j.items()) {
    try {
      c[std::stoi(k)] = v.get<int>();
    } catch (const std::exception&) {
      throw ConfigError("composition keys must be domain ids, got '" + k + "'");
    }
  }
  return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : c.benchmark.targets) targets.push_back({{"name", t.name}, {"stack", t.stack}});
  nlohmann::json train = c.train;
  nlohmann::json st_train = c.self_train.train;
  return {
      {"name", c.name},
      {"benchmark_dir", c.benchmark_dir},
      {"benchmark",
       {{"num_classes", c.benchmark.scene.num_classes},
        {"height", c.benchmark.scene.height},
        {"width", c.benchmark.scene.width},
        {"train_per_domain", c.benchmark.train_per_domain},
        {"test_per_domain", c.benchmark.test_per_domain},
        {"source_name", c.benchmark.source_name},
        {"targets", targets},
        {"seed", c.resolved_benchmark_seed()}}},
      {"detector", c.detector},
      {"discriminator", c.discriminator},
      {"train", train},
      {"composition", composition_to_json(c.composition)},
      {"self_train",
       {{"start", c.self_train.schedule.start},
        {"step", c.self_train.schedule.step},
        {"end", c.self_train.schedule.end},
        {"round_iterations", c.self_train.round_iterations},
        {"adversarial", c.self_train.adversarial},
        {"reinit", c.self_train.reinit},
        {"pseudo_only", c.self_train.pseudo_only},
        {"uncertain_floor", c.self_train.uncertain_floor},
        {"train", st_train}}},
      {"stages", {{"stage1", to_string(c.stage1)}, {"stage2", c.stage2}, {"stage3", c.stage3}}},
      {"external_translation_dir", c.external_translation_dir},
      {"init_checkpoint", c.init_checkpoint},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"iou_threshold", c.iou_threshold},
      {"score_floor", c.eval.score_floor},
      {"nms_iou", c.eval.nms_iou}};
}

/// Reads a config document; absent keys keep their defaults, unknown
/// top-level keys are rejected.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "name", "benchmark_dir", "benchmark", "detector", "discriminator", "train", "composition",
      "self_train", "stages", "external_translation_dir", "init_checkpoint", "seed",
      "output_dir", "iou_threshold", "score_floor", "nms_iou", "stop_after", "resume"};
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw ConfigError("unknown config key '" + k + "'");
  ExperimentConfig c;
  try {
    c.name = j.value("name", c.name);
    c.benchmark_dir = j.value("benchmark_dir", c.benchmark_dir);
    if (j.contains("benchmark")) {
      const auto& b = j["benchmark"];
      c.benchmark.scene.num_classes = b.value("num_classes", c.benchmark.scene.num_classes);
      c.benchmark.scene.height = b.value("height", c.benchmark.scene.height);
      c.benchmark.scene.width = b.value("width", c.benchmark.scene.width);
      c.benchmark.train_per_domain = b.value("train_per_domain", c.benchmark.train_per_domain);
      c.benchmark.test_per_domain = b.value("test_per_domain", c.benchmark.test_per_domain);
      c.benchmark.source_name = b.value("source_name", c.benchmark.source_name);
      if (b.contains("targets")) {
        c.benchmark.targets.clear();
        for (const auto& t : b["targets"])
          c.benchmark.targets.push_back({t.at("name").get<std::string>(),
                                         t.at("stack").get<std::string>()});
      }
      if (b.contains("seed")) c.benchmark_seed = b["seed"].get<std::uint64_t>();
    }
    if (j.contains("detector")) c.detector = j["detector"].get<detector::DetectorConfig>();
    c.detector.num_classes = c.benchmark.scene.num_classes;
    if (j.contains("discriminator"))
      c.discriminator = j["discriminator"].get<adversarial::DiscriminatorConfig>();
    if (j.contains("train")) adversarial::from_json(j["train"], c.train);
    if (j.contains("composition")) c.composition = composition_from_json(j["composition"]);
    if (j.contains("self_train")) {
      const auto& s = j["self_train"];
      auto& st = c.self_train;
      st.schedule.start = s.value("start", st.schedule.start);
      st.schedule.step = s.value("step", st.schedule.step);
      st.schedule.end = s.value("end", st.schedule.end);
      st.round_iterations = s.value("round_iterations", st.round_iterations);
      st.adversarial = s.value("adversarial", st.adversarial);
      st.reinit = s.value("reinit", st.reinit);
      st.pseudo_only = s.value("pseudo_only", st.pseudo_only);
      st.uncertain_floor = s.value("uncertain_floor", st.uncertain_floor);
      if (s.contains("train")) adversarial::from_json(s["train"], st.train);
    }
    if (j.contains("stages")) {
      const auto& s = j["stages"];
      c.stage1 = parse_pixel_stage(s.value("stage1", std::string("off")));
      c.stage2 = s.value("stage2", c.stage2);
      c.stage3 = s.value("stage3", c.stage3);
    }
    c.external_translation_dir = j.value("external_translation_dir", c.external_translation_dir);
    c.init_checkpoint = j.value("init_checkpoint", c.init_checkpoint);
    c.stop_after = j.value("stop_after", c.stop_after);
    c.resume = j.value("resume", c.resume);
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.iou_threshold = j.value("iou_threshold", c.iou_threshold);
    c.eval.score_floor = j.value("score_floor", c.eval.score_floor);
    c.eval.nms_iou = j.value("nms_iou", c.eval.nms_iou);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace mda::pipeline
