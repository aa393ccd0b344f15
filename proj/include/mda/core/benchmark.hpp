#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mda/core/batch.hpp"
#include "mda/core/coco.hpp"
#include "mda/core/png_io.hpp"
#include "mda/core/render.hpp"
#include "mda/core/transforms.hpp"
#include "mda/core/types.hpp"

namespace mda {

struct TargetStyle {
  std::string name;
  std::string stack;
};

struct BenchmarkConfig {
  SceneConfig scene;
  int train_per_domain = 200;
  int test_per_domain = 50;
  std::string source_name = "source";
  std::vector<TargetStyle> targets = {
      {"hololens", "hue:140,saturation:0.5,blur:1.0,brightness:0.7"},
      {"gopro", "crop:0.8,contrast:0.5,tint:0.1:0.03:-0.08,noise:0.04"},
  };
};

inline void validate(const BenchmarkConfig& c) {
  if (c.scene.num_classes < 1 || c.scene.num_classes > kMaxShapeClasses)
    throw ConfigError("class count must lie in [1, " + std::to_string(kMaxShapeClasses) + "]");
  if (c.train_per_domain < 1 || c.test_per_domain < 1)
    throw ConfigError("split sizes must be >= 1");
  if (c.scene.height < 8 || c.scene.width < 8) throw ConfigError("image too small");
  if (c.scene.min_objects < 0 || c.scene.max_objects < c.scene.min_objects)
    throw ConfigError("bad object count range");
  if (c.scene.min_size < 2 || c.scene.max_size < c.scene.min_size)
    throw ConfigError("bad object size range");
  if (c.targets.empty()) throw ConfigError("at least one target domain required");
  for (std::size_t i = 0; i < c.targets.size(); ++i) {
    parse_transform_stack(c.targets[i].stack);
    for (std::size_t j = 0; j < i; ++j)
      if (c.targets[i].stack == c.targets[j].stack)
        throw ConfigError("target transformation stacks must be distinct");
  }
}

/// Independent stream for domain `index` under `seed`.
inline Rng domain_rng(std::uint64_t seed, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x6d6461u};
  return Rng(seq);
}

inline int make_image_id(int domain_id, int index) { return domain_id * 100000 + index; }

/// Source domain (id 0) of clean renders plus one target per configured
/// style (ids 1..D). Target train labels are sealed; test splits are labeled.
inline std::vector<DomainDataset> generate_toy_benchmark(const BenchmarkConfig& config,
                                                         std::uint64_t seed) {
  validate(config);
  std::vector<DomainDataset> out;
  const int num_domains = 1 + static_cast<int>(config.targets.size());
  for (int d = 0; d < num_domains; ++d) {
    DomainDataset ds;
    TransformStack stack;
    if (d == 0) {
      ds.spec = DomainSpec::source(0, config.source_name);
    } else {
      ds.spec = DomainSpec::target(d, config.targets[d - 1].name);
      stack = parse_transform_stack(config.targets[d - 1].stack);
    }
    Rng rng = domain_rng(seed, d);
    const int total = config.train_per_domain + config.test_per_domain;
    for (int i = 0; i < total; ++i) {
      RenderedScene scene = render_scene(config.scene, rng);
      std::vector<Annotation> anns;
      for (const auto& s : scene.shapes) anns.push_back(s.annotation);
      apply_transform_stack(stack, scene.image, anns, rng);
      quantize_u8(scene.image);
      const bool is_train = i < config.train_per_domain;
      const LabelState state =
          (is_train && !ds.spec.train_labeled) ? LabelState::kSealed : LabelState::kLabeled;
      ImageSample sample(make_image_id(d, i), d, std::move(scene.image), std::move(anns), state);
      (is_train ? ds.train : ds.test).push_back(std::move(sample));
    }
    out.push_back(std::move(ds));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest: one "key=value" per line.

inline std::string benchmark_manifest(const BenchmarkConfig& c, std::uint64_t seed) {
  std::ostringstream os;
  os.precision(17);
  os << "format=mda-toy-benchmark-1\n"
     << "seed=" << seed << "\n"
     << "num_classes=" << c.scene.num_classes << "\n"
     << "height=" << c.scene.height << "\n"
     << "width=" << c.scene.width << "\n"
     << "train_per_domain=" << c.train_per_domain << "\n"
     << "test_per_domain=" << c.test_per_domain << "\n"
     << "min_objects=" << c.scene.min_objects << "\n"
     << "max_objects=" << c.scene.max_objects << "\n"
     << "min_size=" << c.scene.min_size << "\n"
     << "max_size=" << c.scene.max_size << "\n"
     << "domain.0.name=" << c.source_name << "\n"
     << "domain.0.role=source\n";
  for (std::size_t i = 0; i < c.targets.size(); ++i) {
    os << "domain." << i + 1 << ".name=" << c.targets[i].name << "\n"
       << "domain." << i + 1 << ".role=target\n"
       << "domain." << i + 1 << ".stack=" << c.targets[i].stack << "\n";
  }
  return os.str();
}

inline std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw LoadError("manifest line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

struct BenchmarkManifest {
  BenchmarkConfig config;
  std::uint64_t seed = 0;
};

inline BenchmarkManifest parse_benchmark_manifest(std::istream& in) {
  const auto kv = parse_key_values(in);
  auto get = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw LoadError("manifest missing key '" + k + "'");
    return it->second;
  };
  BenchmarkManifest m;
  m.seed = std::stoull(get("seed"));
  auto& c = m.config;
  c.scene.num_classes = std::stoi(get("num_classes"));
  c.scene.height = std::stoi(get("height"));
  c.scene.width = std::stoi(get("width"));
  c.train_per_domain = std::stoi(get("train_per_domain"));
  c.test_per_domain = std::stoi(get("test_per_domain"));
  c.scene.min_objects = std::stoi(get("min_objects"));
  c.scene.max_objects = std::stoi(get("max_objects"));
  c.scene.min_size = std::stod(get("min_size"));
  c.scene.max_size = std::stod(get("max_size"));
  c.source_name = get("domain.0.name");
  c.targets.clear();
  for (int d = 1; kv.count("domain." + std::to_string(d) + ".name"); ++d)
    c.targets.push_back({get("domain." + std::to_string(d) + ".name"),
                         get("domain." + std::to_string(d) + ".stack")});
  return m;
}

/// Writes manifest.txt plus one annotation document (and PNG directory) per
/// domain into `dir`.
inline void write_benchmark(const std::filesystem::path& dir, const BenchmarkConfig& config,
                            std::uint64_t seed, const std::vector<DomainDataset>& datasets) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "manifest.txt");
    if (!out) throw LoadError("cannot write manifest in " + dir.string());
    out << benchmark_manifest(config, seed);
  }
  for (const auto& ds : datasets) {
    CocoWriteOptions opt;
    opt.image_dir = ds.spec.name;
    opt.num_classes = config.scene.num_classes;
    write_annotations(ds, dir / (ds.spec.name + ".json"), opt);
  }
}

/// Loads a benchmark directory written by write_benchmark.
inline std::pair<BenchmarkManifest, std::vector<DomainDataset>> load_benchmark(
    const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw LoadError("no manifest.txt in " + dir.string());
  BenchmarkManifest m = parse_benchmark_manifest(in);
  std::vector<DomainDataset> out;
  CocoLoadOptions opt;
  opt.num_classes = m.config.scene.num_classes;
  out.push_back(load_annotations(dir / (m.config.source_name + ".json"),
                                 DomainSpec::source(0, m.config.source_name), opt));
  for (std::size_t i = 0; i < m.config.targets.size(); ++i) {
    const auto& t = m.config.targets[i];
    out.push_back(load_annotations(dir / (t.name + ".json"),
                                   DomainSpec::target(static_cast<int>(i) + 1, t.name), opt));
  }
  return {m, out};
}

}  // namespace mda
