#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mda/pipeline/ablation.hpp"
#include "support/tmpdir.hpp"

using namespace mda;
using namespace mda::pipeline;
namespace fs = std::filesystem;

namespace {

// Small enough that a full three-stage run takes a couple of seconds.
ExperimentConfig tiny(const fs::path& out) {
  ExperimentConfig c;
  c.name = "tiny";
  c.benchmark.train_per_domain = 4;
  c.benchmark.test_per_domain = 2;
  c.train.iterations = 4;
  c.self_train.schedule = {0.5, 0.1, 0.6};
  c.self_train.round_iterations = 2;
  c.stage2 = c.stage3 = true;
  c.seed = 3;
  c.output_dir = out.string();
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunManifest fake(const std::string& name, const std::string& kind, double iou, double map) {
  RunManifest m;
  m.name = name;
  m.kind = kind;
  eval::EvalReport r;
  r.iou_threshold = iou;
  r.num_classes = 1;
  eval::DomainEval d;
  d.name = "hololens";
  d.map = map;
  r.domains.push_back(d);
  m.stages.push_back({"final", "", "", r});
  return m;
}

struct EnvGuard {
  explicit EnvGuard(const char* value) {
    if (const char* old = std::getenv(kOutputRootEnv)) saved = old;
    if (value) ::setenv(kOutputRootEnv, value, 1);
    else ::unsetenv(kOutputRootEnv);
  }
  ~EnvGuard() {
    if (saved) ::setenv(kOutputRootEnv, saved->c_str(), 1);
    else ::unsetenv(kOutputRootEnv);
  }
  std::optional<std::string> saved;
};

}  // namespace

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c = tiny("runs/x");
  c.discriminator.loss_weight = 0.25;
  c.composition = {{0, 2}, {1, 3}};
  c.iou_threshold = 0.6;
  c.stop_after = "stage2";
  const auto j = config_to_json(c);
  const auto back = config_from_json(j);
  EXPECT_EQ(config_to_json(back), j);
  EXPECT_EQ(back.composition, c.composition);
  EXPECT_EQ(back.self_train.schedule.start, 0.5);
  EXPECT_EQ(back.iou_threshold, 0.6);
}

TEST(Config, UnknownKeysAndBadTypesRejected) {
  auto j = config_to_json(ExperimentConfig{});
  j["learning_rate"] = 0.1;
  EXPECT_THROW(config_from_json(j), ConfigError);
  auto k = config_to_json(ExperimentConfig{});
  k["seed"] = "one";
  EXPECT_THROW(config_from_json(k), ConfigError);

  TempDir dir;
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(load_config(dir / "bad.json"), ConfigError);
  EXPECT_THROW(load_config(dir / "absent.json"), ConfigError);
}

TEST(Config, Validation) {
  ExperimentConfig c = tiny("runs/x");
  EXPECT_NO_THROW(validate(c));

  auto no_stage2 = c;
  no_stage2.stage2 = false;
  EXPECT_THROW(validate(no_stage2), ConfigError);
  no_stage2.init_checkpoint = "stage2.ckpt";
  EXPECT_NO_THROW(validate(no_stage2));

  auto no_source = c;
  no_source.composition = {{1, 4}, {2, 4}};
  EXPECT_THROW(validate(no_source), ConfigError);

  auto external = c;
  external.stage1 = PixelStage::kExternal;
  EXPECT_THROW(validate(external), ConfigError);

  auto stop = c;
  stop.stop_after = "stage9";
  EXPECT_THROW(validate(stop), ConfigError);

  auto iou = c;
  iou.iou_threshold = 0.0;
  EXPECT_THROW(validate(iou), ConfigError);
}

TEST(Config, OutputRootOverride) {
  ExperimentConfig c;
  c.output_dir = "runs/a";
  {
    EnvGuard env("/data/out");
    EXPECT_EQ(resolve_output_dir(c), fs::path("/data/out/runs/a"));
    c.output_dir = "/abs/a";
    EXPECT_EQ(resolve_output_dir(c), fs::path("/abs/a"));
  }
  EnvGuard env(nullptr);
  c.output_dir = "runs/a";
  EXPECT_EQ(resolve_output_dir(c), fs::path("runs/a"));
}

TEST(Pipeline, WritesArtifactsAndIsDeterministic) {
  TempDir dir;
  const auto reads = sealed_label_reads().load();
  const auto a = run_pipeline(tiny(dir / "a"));
  const auto b = run_pipeline(tiny(dir / "b"));
  EXPECT_EQ(sealed_label_reads().load(), reads);

  EXPECT_EQ(a.status, "complete");
  EXPECT_EQ(a.kind, "mda+st");
  EXPECT_EQ(a.sealed_label_reads, reads);
  for (const char* f : {"config.json", "manifest.json", "stage2.ckpt", "stage2_log.jsonl",
                        "eval_stage2.txt", "eval_stage2.json", "rounds.jsonl",
                        "stage3_round0.ckpt", "stage3_round1.ckpt", "pseudo_round0_hololens.json",
                        "pseudo_round1_gopro.json", "eval_final.txt", "eval_final.json"})
    EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;

  ASSERT_EQ(a.stages.size(), b.stages.size());
  ASSERT_EQ(a.stages.size(), 3u);  // stage2 + two rounds
  for (std::size_t i = 0; i < a.stages.size(); ++i) {
    EXPECT_EQ(a.stages[i].name, b.stages[i].name);
    EXPECT_EQ(a.stages[i].checkpoint_hash, b.stages[i].checkpoint_hash) << a.stages[i].name;
    ASSERT_TRUE(a.stages[i].report && b.stages[i].report);
    EXPECT_EQ(a.stages[i].report->digest(), b.stages[i].report->digest());
  }
  EXPECT_EQ(slurp(dir / "a" / "rounds.jsonl"), slurp(dir / "b" / "rounds.jsonl"));

  // The manifest on disk reads back to the returned one.
  const auto loaded = load_manifest(dir / "a" / "manifest.json");
  EXPECT_EQ(to_json(loaded), to_json(a));
  EXPECT_EQ(loaded.last_checkpoint(), "stage3_round1.ckpt");

  // A different seed gives a different model.
  auto c = tiny(dir / "c");
  c.seed = 4;
  const auto other = run_pipeline(c);
  EXPECT_NE(other.stages[0].checkpoint_hash, a.stages[0].checkpoint_hash);
}

TEST(Pipeline, ResumeAfterStage2MatchesUninterruptedRun) {
  TempDir dir;
  const auto full = run_pipeline(tiny(dir / "full"));

  auto first = tiny(dir / "split");
  first.stop_after = "stage2";
  const auto half = run_pipeline(first);
  EXPECT_EQ(half.status, "partial");
  EXPECT_FALSE(fs::exists(dir / "split" / "rounds.jsonl"));

  auto second = tiny(dir / "split");
  second.resume = true;
  const auto done = run_pipeline(second);
  EXPECT_EQ(done.status, "complete");
  ASSERT_EQ(done.stages.size(), full.stages.size());
  for (std::size_t i = 0; i < full.stages.size(); ++i)
    EXPECT_EQ(done.stages[i].checkpoint_hash, full.stages[i].checkpoint_hash) << i;
  EXPECT_EQ(slurp(dir / "split" / "rounds.jsonl"), slurp(dir / "full" / "rounds.jsonl"));
}

TEST(Pipeline, InitCheckpointFeedsStage3) {
  TempDir dir;
  auto two = tiny(dir / "two");
  two.stage3 = false;
  const auto m = run_pipeline(two);
  EXPECT_EQ(m.kind, "mda");
  EXPECT_FALSE(fs::exists(dir / "two" / "rounds.jsonl"));

  auto three = tiny(dir / "three");
  three.stage2 = false;
  three.init_checkpoint = (dir / "two" / "stage2.ckpt").string();
  const auto st = run_pipeline(three);
  EXPECT_EQ(st.status, "complete");
  EXPECT_EQ(st.find("stage2"), nullptr);
  EXPECT_NE(st.find("stage3_round1"), nullptr);
}

TEST(Pipeline, FailureLeavesPartialManifest) {
  TempDir dir;
  auto c = tiny(dir / "broken");
  c.stage1 = PixelStage::kExternal;
  c.external_translation_dir = (dir / "nowhere").string();
  EXPECT_THROW(run_pipeline(c), LoadError);
  const auto m = load_manifest(dir / "broken" / "manifest.json");
  EXPECT_EQ(m.status, "partial");
  EXPECT_FALSE(m.error.empty());

  auto d = tiny(dir / "badckpt");
  d.stage2 = false;
  d.init_checkpoint = (dir / "missing.ckpt").string();
  EXPECT_THROW(run_pipeline(d), LoadError);
  EXPECT_EQ(load_manifest(dir / "badckpt" / "manifest.json").status, "partial");
}

TEST(Pipeline, ReferenceTranslationStage) {
  TempDir dir;
  auto c = tiny(dir / "px");
  c.stage1 = PixelStage::kReference;
  c.stop_after = "stage1";
  const auto m = run_pipeline(c);
  EXPECT_EQ(m.status, "partial");
  ASSERT_EQ(m.stages.size(), 1u);
  EXPECT_EQ(m.stages[0].name, "stage1");
}

TEST(Baseline, OracleNeedsUnlock) {
  TempDir dir;
  auto c = tiny(dir / "oracle");
  EXPECT_THROW(train_baseline(c, 1), ValidationError);
  const auto reads = sealed_label_reads().load();
  const auto o = train_baseline(c, 1, true);
  EXPECT_EQ(o.kind, "oracle");
  // The unlock unseals explicitly; it is not a protocol violation.
  EXPECT_EQ(sealed_label_reads().load(), reads);

  c.output_dir = (dir / "base").string();
  const auto b = train_baseline(c);
  EXPECT_EQ(b.kind, "baseline");
  EXPECT_EQ(b.status, "complete");
  ASSERT_NE(b.final_report(), nullptr);
  EXPECT_EQ(b.final_report()->domains.size(), 3u);
}

TEST(Ablation, SuitesAndVariants) {
  const std::vector<std::string> want = {"placement", "threshold", "discriminator-mode",
                                         "target-count"};
  EXPECT_EQ(ablation_suites(), want);
  ExperimentConfig base = tiny("runs/abl");
  const std::vector<std::size_t> counts = {10, 4, 2, 3};
  for (std::size_t i = 0; i < want.size(); ++i) {
    const auto v = ablation_variants(base, want[i]);
    EXPECT_EQ(v.size(), counts[i]) << want[i];
    for (const auto& x : v) {
      EXPECT_EQ(fs::path(x.config.output_dir), fs::path("runs/abl") / want[i] / x.label);
      EXPECT_NO_THROW(validate(x.config)) << x.label;
    }
  }
  const auto th = ablation_variants(base, "threshold");
  EXPECT_EQ(th[0].label, "t0.90-0.90");
  EXPECT_EQ(th[3].config.self_train.schedule.start, 0.75);
  const auto tc = ablation_variants(base, "target-count");
  EXPECT_EQ(tc[0].config.composition.size(), 2u);
  EXPECT_EQ(tc[0].config.composition.at(1), 4);
  EXPECT_THROW(ablation_variants(base, "nonsense"), ValidationError);
}

TEST(Ablation, RunsSuiteWithSeeds) {
  TempDir dir;
  auto base = tiny(dir / "abl");
  base.self_train.schedule = {0.5, 0.1, 0.5};
  const auto ms = run_ablation_suite(base, "discriminator-mode", {1, 2});
  ASSERT_EQ(ms.size(), 4u);
  EXPECT_EQ(ms[0].kind, "binary");
  EXPECT_EQ(ms[3].kind, "multiclass");
  EXPECT_TRUE(fs::exists(dir / "abl" / "discriminator-mode" / "binary" / "seed2" / "manifest.json"));
  const auto r = report(ms);
  EXPECT_EQ(r.document["rows"].size(), 4u);
  EXPECT_FALSE(r.mixed_iou_thresholds);
}

TEST(Report, OrderingAndMixedThresholds) {
  const std::vector<RunManifest> ms = {fake("z", "placement", 0.5, 0.1), fake("s", "mda+st", 0.5, 0.4),
                                       fake("b", "baseline", 0.5, 0.2), fake("m", "mda", 0.5, 0.3),
                                       fake("o", "oracle", 0.5, 0.9)};
  const auto r = report(ms);
  std::vector<std::string> order;
  for (const auto& row : r.document["rows"]) order.push_back(row["name"]);
  EXPECT_EQ(order, (std::vector<std::string>{"b", "o", "m", "s", "z"}));
  EXPECT_FALSE(r.mixed_iou_thresholds);
  EXPECT_EQ(r.text.find("WARNING"), std::string::npos);
  EXPECT_NE(r.text.find("0.9000"), std::string::npos);

  auto mixed = ms;
  mixed.push_back(fake("strict", "mda", 0.75, 0.1));
  const auto w = report(mixed);
  EXPECT_TRUE(w.mixed_iou_thresholds);
  EXPECT_EQ(w.text.rfind("WARNING", 0), 0u);

  // A run without any evaluation still gets a row.
  RunManifest empty;
  empty.name = "nothing";
  empty.status = "partial";
  const auto e = report({empty});
  EXPECT_TRUE(e.document["rows"][0]["map"].empty());
  EXPECT_THROW(report({}), ValidationError);
}

#ifdef MDA_CLI_PATH
namespace {
int cli(const std::string& args) {
  const std::string cmd = std::string(MDA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}
}  // namespace

TEST(Cli, ExitCodes) {
  TempDir dir;
  EXPECT_EQ(cli("--version"), 0);
  EXPECT_EQ(cli("train --no-such-flag"), 2);
  EXPECT_EQ(cli("train -c " + (dir / "absent.json").string()), 3);
  std::ofstream(dir / "bad.json") << "{\"bogus\": 1}";
  EXPECT_EQ(cli("train -c " + (dir / "bad.json").string()), 3);
  EXPECT_EQ(cli("ablate --suite nonsense -o " + (dir / "abl").string()), 2);
  EXPECT_EQ(cli("train --oracle 1 -o " + (dir / "o").string()), 2);
}
#endif
