// mda: command-line driver for the toy multi-target adaptation pipeline.
//
//   mda generate-bench --out bench --seed 3
//   mda train -c run.json
//   mda train -c run.json --baseline
//   mda train -c run.json --oracle 1 --unlock-target-labels
//   mda self-train -c run.json --checkpoint runs/a/stage2.ckpt
//   mda evaluate -c run.json --checkpoint runs/a/stage2.ckpt
//   mda ablate -c run.json --suite placement --seeds 1,2
//   mda report runs/*/manifest.json --out summary
//
// Relative output paths resolve against $MDA_OUTPUT_ROOT when set.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mda/errors.hpp"
#include "mda/pipeline/ablation.hpp"
#include "mda/pipeline/config.hpp"
#include "mda/pipeline/run.hpp"
#include "mda/pixeladapt/translate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mda;
using namespace mda::pipeline;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out;
  std::int64_t seed = -1;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_out = true) {
  cmd->add_option("-c,--config", c.config_path, "JSON experiment config");
  cmd->add_option("--set", c.sets, "override a config value: dotted.key=json");
  if (with_out) cmd->add_option("-o,--out", c.out, "output directory");
  cmd->add_option("--seed", c.seed, "run seed");
  cmd->add_flag("-q,--quiet", c.quiet, "no progress on stderr");
}

// "train.iterations=500" -> j["train"]["iterations"] = 500. Values that do
// not parse as JSON are taken as strings.
void apply_override(json& j, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + kv + "'");
  const std::string key = kv.substr(0, eq), raw = kv.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty()) throw ConfigError("bad override key '" + key + "'");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

ExperimentConfig load(const Common& c) {
  json j = json::object();
  if (!c.config_path.empty()) {
    std::ifstream in(c.config_path);
    if (!in) throw ConfigError("cannot open config " + c.config_path);
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("cannot parse config " + c.config_path + ": " + e.what());
    }
  }
  for (const auto& s : c.sets) apply_override(j, s);
  ExperimentConfig cfg = config_from_json(j);
  if (c.seed >= 0) cfg.seed = static_cast<std::uint64_t>(c.seed);
  if (!c.out.empty()) cfg.output_dir = c.out;
  return cfg;
}

fs::path resolve(const std::string& path) {
  ExperimentConfig tmp;
  tmp.output_dir = path;
  return resolve_output_dir(tmp);
}

std::ostream* progress(const Common& c) { return c.quiet ? nullptr : &std::cerr; }

void print_summary(const RunManifest& m) {
  std::cout << "run " << m.name << " (" << m.kind << ") " << m.status << " -> " << m.output_dir
            << "\n";
  if (const auto* r = m.final_report())
    for (const auto& d : r->domains) std::cout << "  " << d.name << " mAP " << d.map << "\n";
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << text;
}

int cmd_generate(const Common& c) {
  ExperimentConfig cfg = load(c);
  const fs::path dir = resolve(c.out.empty() ? "bench" : c.out);
  const auto seed = c.seed >= 0 ? static_cast<std::uint64_t>(c.seed) : cfg.resolved_benchmark_seed();
  validate(cfg.benchmark);
  const auto datasets = generate_toy_benchmark(cfg.benchmark, seed);
  write_benchmark(dir, cfg.benchmark, seed, datasets);
  std::cout << "wrote " << datasets.size() << " domains to " << dir.string() << "\n";
  return 0;
}

int cmd_translate(const Common& c) {
  ExperimentConfig cfg = load(c);
  const fs::path dir = resolve(c.out.empty() ? "translated" : c.out);
  auto datasets = load_datasets(cfg);
  std::vector<const DomainDataset*> targets;
  for (const auto& ds : datasets)
    if (ds.spec.role == DomainRole::kTarget && cfg.composition.count(ds.spec.domain_id) &&
        cfg.composition.at(ds.spec.domain_id) > 0)
      targets.push_back(&ds);
  const auto translator = pixeladapt::fit_reference_translator(datasets.at(0), targets);
  fs::create_directories(dir);
  pixeladapt::save_stats(dir / "stats.txt", translator);
  pixeladapt::write_translation(dir, pixeladapt::translate_dataset(datasets.at(0), translator));
  std::cout << "wrote " << datasets.at(0).train.size() << " translated images to " << dir.string()
            << "\n";
  return 0;
}

int cmd_train(const Common& c, bool baseline, int oracle, bool unlock, bool resume) {
  ExperimentConfig cfg = load(c);
  if (resume) cfg.resume = true;
  RunManifest m = (baseline || oracle >= 0) ? train_baseline(cfg, oracle, unlock, progress(c))
                                            : run_pipeline(cfg, progress(c));
  print_summary(m);
  return 0;
}

int cmd_self_train(const Common& c, const std::string& checkpoint) {
  ExperimentConfig cfg = load(c);
  cfg.stage2 = false;
  cfg.stage3 = true;
  if (!checkpoint.empty()) cfg.init_checkpoint = checkpoint;
  print_summary(run_pipeline(cfg, progress(c)));
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& checkpoint, double iou) {
  ExperimentConfig cfg = load(c);
  if (iou > 0) cfg.iou_threshold = iou;
  validate(cfg);
  auto datasets = load_datasets(cfg);
  // Baseline checkpoints carry no discriminator parameters.
  eval::EvalReport report;
  try {
    adversarial::MdaModel<float> model(cfg.detector, cfg.discriminator);
    nn::load_checkpoint(checkpoint, model.params());
    report = evaluate_model(model, datasets, cfg);
  } catch (const ShapeError&) {
    adversarial::MdaModel<float> model(cfg.detector, cfg.discriminator, false);
    nn::load_checkpoint(checkpoint, model.params());
    report = evaluate_model(model, datasets, cfg);
  }
  std::cout << report.to_text();
  if (!c.out.empty()) {
    const fs::path dir = resolve(c.out);
    fs::create_directories(dir);
    write_file(dir / "eval.txt", report.to_text());
    write_file(dir / "eval.json", json(report).dump(1) + "\n");
  }
  return 0;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::size_t start = 0;
  while (start < s.size()) {
    auto comma = s.find(',', start);
    if (comma == std::string::npos) comma = s.size();
    try {
      out.push_back(std::stoull(s.substr(start, comma - start)));
    } catch (const std::exception&) {
      throw ValidationError("bad seed list '" + s + "'");
    }
    start = comma + 1;
  }
  return out;
}

void emit_report(const std::vector<RunManifest>& manifests, const fs::path& dir) {
  const auto r = report(manifests);
  std::cout << r.text;
  if (!dir.empty()) {
    fs::create_directories(dir);
    write_file(dir / "report.txt", r.text);
    write_file(dir / "report.json", r.document.dump(1) + "\n");
  }
}

int cmd_ablate(const Common& c, const std::string& suite, const std::string& seeds) {
  ExperimentConfig cfg = load(c);
  const auto manifests = run_ablation_suite(cfg, suite, parse_seeds(seeds), progress(c));
  emit_report(manifests, resolve_output_dir(cfg) / suite);
  return 0;
}

int cmd_report(const std::vector<std::string>& paths, const std::string& out) {
  std::vector<RunManifest> manifests;
  for (const auto& p : paths)
    manifests.push_back(load_manifest(fs::is_directory(p) ? fs::path(p) / "manifest.json" : fs::path(p)));
  emit_report(manifests, out.empty() ? fs::path() : resolve(out));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-target domain adaptation for object detection (toy scale)"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  Common gen, tr, trn, st, ev, ab;
  auto* generate = app.add_subcommand("generate-bench", "write the synthetic 3-domain benchmark");
  add_common(generate, gen);

  auto* translate = app.add_subcommand("translate", "fit the reference translator and write S'");
  add_common(translate, tr);

  bool baseline = false, unlock = false, resume = false;
  int oracle = -1;
  auto* train = app.add_subcommand("train", "run the enabled pipeline stages");
  add_common(train, trn);
  train->add_flag("--baseline", baseline, "source-only detector, no adaptation");
  train->add_option("--oracle", oracle, "train on this target domain's labels");
  train->add_flag("--unlock-target-labels", unlock, "required with --oracle");
  train->add_flag("--resume", resume, "continue a run in the same directory after stage 2");

  std::string st_ckpt;
  auto* self_train = app.add_subcommand("self-train", "stage 3 only, from a checkpoint");
  add_common(self_train, st);
  self_train->add_option("--checkpoint", st_ckpt, "stage-2 checkpoint")->required();

  std::string ev_ckpt;
  double ev_iou = -1;
  auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on every test split");
  add_common(evaluate, ev);
  evaluate->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  evaluate->add_option("--iou", ev_iou, "IoU threshold");

  std::string suite, seeds;
  auto* ablate = app.add_subcommand("ablate", "run an ablation suite and report");
  add_common(ablate, ab);
  ablate->add_option("--suite", suite, "placement | threshold | discriminator-mode | target-count")
      ->required();
  ablate->add_option("--seeds", seeds, "comma-separated seed list");

  std::vector<std::string> manifests;
  std::string report_out;
  auto* rep = app.add_subcommand("report", "comparison table over run manifests");
  rep->add_option("manifests", manifests, "manifest.json files or run directories")->required();
  rep->add_option("-o,--out", report_out, "write report.txt / report.json here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_code(ErrorCategory::kValidation);
  }

  try {
    if (*generate) return cmd_generate(gen);
    if (*translate) return cmd_translate(tr);
    if (*train) return cmd_train(trn, baseline, oracle, unlock, resume);
    if (*self_train) return cmd_self_train(st, st_ckpt);
    if (*evaluate) return cmd_evaluate(ev, ev_ckpt, ev_iou);
    if (*ablate) return cmd_ablate(ab, suite, seeds);
    if (*rep) return cmd_report(manifests, report_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(ErrorCategory::kRuntime);
  }
  return 0;
}
