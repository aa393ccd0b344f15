#pragma once

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mda/pipeline/config.hpp"
#include "mda/pipeline/run.hpp"

namespace mda::pipeline {

using detector::Level;

inline const std::vector<std::string>& ablation_suites() {
  static const std::vector<std::string> names = {"placement", "threshold", "discriminator-mode",
                                                 "target-count"};
  return names;
}

struct AblationVariant {
  std::string label;
  ExperimentConfig config;
};

namespace detail {

inline std::string levels_label(const std::vector<Level>& levels) {
  std::string s;
  for (Level l : levels) s += (s.empty() ? "" : "+") + std::string(detector::level_name(l));
  return s;
}

inline int count_targets(const BatchComposition& c) {
  int n = 0;
  for (const auto& [id, k] : c) n += id != 0 && k > 0;
  return n;
}

}  // namespace detail

/// Configurations of one suite, derived from `base`. Outputs go to
/// <base.output_dir>/<suite>/<label>.
inline std::vector<AblationVariant> ablation_variants(const ExperimentConfig& base,
                                                      const std::string& suite) {
  std::vector<AblationVariant> out;
  auto make = [&](const std::string& label) {
    AblationVariant v{label, base};
    v.config.name = suite + "/" + label;
    v.config.output_dir = (fs::path(base.output_dir) / suite / label).string();
    return v;
  };
  const int targets = detail::count_targets(base.composition);
  if (suite == "placement") {
    using L = Level;
    const std::vector<std::vector<Level>> sets = {
        {L::C3}, {L::C4}, {L::C5}, {L::P3}, {L::P4}, {L::P5},
        {L::C3, L::C4}, {L::C3, L::C4, L::C5}, {L::P3, L::P4}, {L::P3, L::P4, L::P5}};
    for (const auto& levels : sets) {
      auto v = make(detail::levels_label(levels));
      v.config.discriminator.attachment_levels = levels;
      v.config.stage2 = true;
      v.config.stage3 = false;
      out.push_back(std::move(v));
    }
  } else if (suite == "threshold") {
    for (double start : {0.90, 0.85, 0.80, 0.75}) {
      char label[32];
      std::snprintf(label, sizeof label, "t%.2f-0.90", start);
      auto v = make(label);
      v.config.self_train.schedule = {start, 0.05, 0.90};
      v.config.stage2 = v.config.stage3 = true;
      out.push_back(std::move(v));
    }
  } else if (suite == "discriminator-mode") {
    for (auto mode : {adversarial::DiscriminatorMode::kBinary,
                      adversarial::DiscriminatorMode::kMulticlass}) {
      const bool binary = mode == adversarial::DiscriminatorMode::kBinary;
      auto v = make(binary ? "binary" : "multiclass");
      const auto levels = base.discriminator.attachment_levels;
      auto disc = adversarial::DiscriminatorConfig::for_targets(targets, mode, levels);
      disc.hidden_channels = base.discriminator.hidden_channels;
      disc.sum_over_levels = base.discriminator.sum_over_levels;
      disc.loss_weight = base.discriminator.loss_weight;
      v.config.discriminator = disc;
      v.config.stage2 = true;
      v.config.stage3 = false;
      out.push_back(std::move(v));
    }
  } else if (suite == "target-count") {
    std::vector<int> ids;
    for (const auto& [id, k] : base.composition)
      if (id != 0 && k > 0) ids.push_back(id);
    int total = 0;
    for (int id : ids) total += base.composition.at(id);
    auto single = [&](int id) {
      const std::string name = id - 1 < static_cast<int>(base.benchmark.targets.size())
                                   ? base.benchmark.targets[id - 1].name
                                   : "domain" + std::to_string(id);
      auto v = make("source-to-" + name);
      v.config.composition = {{0, base.composition.at(0)}, {id, total}};
      // One target: binary and multiclass coincide at two domain classes.
      v.config.discriminator.num_domain_classes = 2;
      return v;
    };
    for (int id : ids) out.push_back(single(id));
    auto all = make("source-to-all");
    out.push_back(std::move(all));
  } else {
    throw ValidationError("unknown ablation suite '" + suite + "'");
  }
  return out;
}

/// Runs every variant of `suite` once per seed.
inline std::vector<RunManifest> run_ablation_suite(const ExperimentConfig& base,
                                                   const std::string& suite,
                                                   const std::vector<std::uint64_t>& seeds = {},
                                                   std::ostream* progress = nullptr) {
  auto variants = ablation_variants(base, suite);
  const std::vector<std::uint64_t> seed_set = seeds.empty() ? std::vector{base.seed} : seeds;
  std::vector<RunManifest> out;
  for (const auto& v : variants)
    for (std::uint64_t seed : seed_set) {
      ExperimentConfig c = v.config;
      c.seed = seed;
      if (seed_set.size() > 1) {
        c.output_dir = (fs::path(c.output_dir) / ("seed" + std::to_string(seed))).string();
        c.name += "/seed" + std::to_string(seed);
      }
      if (progress) *progress << "ablation " << suite << ": " << c.name << "\n";
      auto m = run_pipeline(c, nullptr);
      m.kind = v.label;
      out.push_back(std::move(m));
    }
  return out;
}

struct ComparisonReport {
  std::string text;
  nlohmann::json document;
  bool mixed_iou_thresholds = false;
};

namespace detail {

inline int kind_rank(const std::string& kind) {
  if (kind == "baseline") return 0;
  if (kind == "oracle") return 1;
  if (kind == "mda") return 2;
  if (kind == "mda+st") return 3;
  return 4;
}

}  // namespace detail

/// Results table: one row per run (baseline, oracle, MDA, MDA+ST first,
/// then the rest in input order), one column per domain mAP.
inline ComparisonReport report(const std::vector<RunManifest>& manifests) {
  if (manifests.empty()) throw ValidationError("report needs at least one manifest");
  std::vector<const RunManifest*> rows;
  for (const auto& m : manifests) rows.push_back(&m);
  std::stable_sort(rows.begin(), rows.end(), [](const RunManifest* a, const RunManifest* b) {
    return detail::kind_rank(a->kind) < detail::kind_rank(b->kind);
  });

  std::vector<std::string> domains;
  std::set<double> thresholds;
  for (const auto* m : rows)
    if (const auto* r = m->final_report()) {
      thresholds.insert(r->iou_threshold);
      for (const auto& d : r->domains)
        if (std::find(domains.begin(), domains.end(), d.name) == domains.end())
          domains.push_back(d.name);
    }

  ComparisonReport out;
  out.mixed_iou_thresholds = thresholds.size() > 1;
  std::ostringstream os;
  if (out.mixed_iou_thresholds) {
    os << "WARNING: runs were evaluated at different IoU thresholds (";
    bool first = true;
    for (double t : thresholds) {
      os << (first ? "" : ", ") << t;
      first = false;
    }
    os << "); their mAPs are not comparable.\n\n";
  }
  std::size_t width = 4;
  for (const auto* m : rows) width = std::max(width, m->name.size());
  char buf[64];
  os << std::string(width, ' ').replace(0, 3, "run");
  for (const auto& d : domains) {
    std::snprintf(buf, sizeof buf, "  %10s", d.c_str());
    os << buf;
  }
  os << "  status\n";
  nlohmann::json jrows = nlohmann::json::array();
  for (const auto* m : rows) {
    std::string name = m->name;
    name.resize(width, ' ');
    os << name;
    nlohmann::json maps = nlohmann::json::object();
    const auto* r = m->final_report();
    for (const auto& d : domains) {
      const eval::DomainEval* e = nullptr;
      if (r)
        for (const auto& x : r->domains)
          if (x.name == d) e = &x;
      if (e) {
        std::snprintf(buf, sizeof buf, "  %10.4f", e->map);
        maps[d] = e->map;
      } else {
        std::snprintf(buf, sizeof buf, "  %10s", "-");
        maps[d] = nullptr;
      }
      os << buf;
    }
    os << "  " << m->status << "\n";
    jrows.push_back({{"name", m->name},
                     {"kind", m->kind},
                     {"seed", m->seed},
                     {"status", m->status},
                     {"iou_threshold", r ? nlohmann::json(r->iou_threshold) : nlohmann::json()},
                     {"map", maps}});
  }
  out.text = os.str();
  out.document = {{"domains", domains},
                  {"rows", jrows},
                  {"mixed_iou_thresholds", out.mixed_iou_thresholds}};
  return out;
}

}  // namespace mda::pipeline
