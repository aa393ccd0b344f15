#include <gtest/gtest.h>

#include <cmath>

#include "mda/adversarial/trainer.hpp"
#include "mda/core/benchmark.hpp"
#include "mda/nn/checkpoint.hpp"

using namespace mda;
using namespace mda::adversarial;

namespace {

std::vector<DomainDataset> tiny_benchmark(std::uint64_t seed, int train = 4) {
  BenchmarkConfig bc;
  bc.scene.num_classes = 3;
  bc.train_per_domain = train;
  bc.test_per_domain = 1;
  return generate_toy_benchmark(bc, seed);
}

detector::DetectorConfig small_detector() {
  detector::DetectorConfig c;
  c.num_classes = 3;
  c.backbone_channels = {8, 8, 12, 12, 12};
  c.fpn_channels = 12;
  c.head_channels = 12;
  return c;
}

// Two labeled source images followed by one image of each target.
ObjectiveBatch<double> mixed_batch(const std::vector<DomainDataset>& ds,
                                   const detector::DetectorConfig& cfg,
                                   std::vector<int> classes, int labeled = 2) {
  ObjectiveBatch<double> b;
  std::vector<const Image*> images = {&ds[0].train[0].pixels(), &ds[0].train[1].pixels(),
                                      &ds[1].train[0].pixels(), &ds[2].train[0].pixels()};
  b.images = detector::images_to_tensor<double>(images, cfg);
  b.labeled = labeled;
  for (int i = 0; i < labeled; ++i) b.labels.push_back(&ds[0].train[i].annotations());
  b.domain_classes = std::move(classes);
  return b;
}

std::vector<double> backbone_grads(MdaModel<double>& m) {
  std::vector<double> out;
  for (auto* p : m.detector_params())
    if (p->name.rfind("backbone.", 0) == 0) out.insert(out.end(), p->grad.begin(), p->grad.end());
  return out;
}

}  // namespace

TEST(Grl, ForwardIsIdentityBackwardScalesByMinusLambda) {
  nn::Tensor<double> g(1, 1, 1, 3);
  g.data = {2.0, -1.0, 0.25};
  EXPECT_EQ(grl_apply(g, 0.7).data, g.data);
  EXPECT_EQ(GradientReversal<double>::backward(g, 0.5).data,
            (std::vector<double>{-1.0, 0.5, -0.125}));
  for (double v : GradientReversal<double>::backward(g, 0.0).data) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(GradientReversal<double>::backward(g, -0.1), ValidationError);
  EXPECT_THROW(grl_apply(g, -1.0), ValidationError);
}

TEST(Schedule, LambdaRamp) {
  EXPECT_EQ(lambda_schedule(0.0), 0.0);
  EXPECT_NEAR(lambda_schedule(0.5), 0.98661429815, 1e-10);
  EXPECT_NEAR(lambda_schedule(1.0), 0.99990920426, 1e-10);
  double prev = -1;
  for (int i = 0; i <= 100; ++i) {
    const double v = lambda_schedule(i / 100.0);
    EXPECT_GT(v, prev);
    EXPECT_LT(v, 1.0);
    prev = v;
  }
  EXPECT_NEAR(lambda_schedule(0.1, 1.0), 2.0 / (1.0 + std::exp(-0.1)) - 1.0, 1e-15);
  EXPECT_THROW(lambda_schedule(-0.01), ValidationError);
  EXPECT_THROW(lambda_schedule(1.01), ValidationError);
}

TEST(Schedule, TotalLoss) {
  EXPECT_NEAR(total_loss({1.0, 0.5}, 0.2, 0.1), 1.48, 1e-15);
  EXPECT_EQ(total_loss({1.0, 0.5}, 0.2, 0.0), 1.5);
  EXPECT_THROW(total_loss({NAN, 0.5}, 0.2, 0.1), NumericError);
  EXPECT_THROW(total_loss({1.0, 0.5}, INFINITY, 0.1), NumericError);
}

TEST(Discriminator, OutputShapes) {
  const auto ds = tiny_benchmark(1);
  const auto det_cfg = detector::DetectorConfig{};
  for (auto mode : {DiscriminatorMode::kMulticlass, DiscriminatorMode::kBinary}) {
    MdaModel<float> model(det_cfg, DiscriminatorConfig::for_targets(2, mode));
    Rng rng(1);
    model.init(rng);
    const auto x = detector::images_to_tensor<float>(
        {&ds[0].train[0].pixels(), &ds[1].train[0].pixels(), &ds[2].train[0].pixels()}, det_cfg);
    detector::ForwardState<float> st;
    model.detector().forward(x, st, 0);
    const auto logits =
        discriminator_forward(model.discriminators()[0], st.pyramid.get(detector::Level::C3));
    EXPECT_EQ(logits.n, 3);
    EXPECT_EQ(logits.c, mode == DiscriminatorMode::kMulticlass ? 3 : 2);
    EXPECT_EQ(logits.h, 8);
    EXPECT_EQ(logits.w, 8);
    const auto p = domain_softmax(logits);
    for (int i = 0; i < 3; ++i)
      for (std::size_t loc = 0; loc < p.plane(); ++loc) {
        double s = 0;
        for (int k = 0; k < p.c; ++k) s += p.image(i)[k * p.plane() + loc];
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
  }
}

TEST(Discriminator, WrongWidthThrows) {
  Discriminator<float> d("d", 8, 8, 3);
  EXPECT_THROW(discriminator_forward(d, nn::Tensor<float>(1, 4, 2, 2)), ShapeError);
}

TEST(DomainLoss, UniformLogitsGiveLogClasses) {
  nn::Tensor<double> logits(2, 3, 4, 4);
  const auto l = domain_loss(logits, std::vector<int>{0, 2});
  EXPECT_NEAR(l.value, std::log(3.0), 1e-15);
  EXPECT_NEAR(domain_loss(logits, 1).value, std::log(3.0), 1e-15);
}

TEST(DomainLoss, TwoLocationsByHand) {
  // Location 0: logits (0, 0); location 1: logits (ln 3, 0); true class 0.
  nn::Tensor<double> logits(1, 2, 1, 2);
  logits.data = {0.0, std::log(3.0), 0.0, 0.0};
  const auto l = domain_loss(logits, std::vector<int>{0});
  EXPECT_NEAR(l.value, (std::log(2.0) + std::log(4.0 / 3.0)) / 2, 1e-15);
  EXPECT_EQ(l.accuracy, 1.0);
  // d/dz = (softmax - onehot) / locations.
  EXPECT_NEAR(l.grad.data[0], -0.25, 1e-15);
  EXPECT_NEAR(l.grad.data[1], -0.125, 1e-15);
  EXPECT_NEAR(l.grad.data[2], 0.25, 1e-15);
  EXPECT_NEAR(l.grad.data[3], 0.125, 1e-15);
}

TEST(DomainLoss, RejectsBadLabels) {
  nn::Tensor<double> logits(2, 3, 1, 1);
  EXPECT_THROW(domain_loss(logits, std::vector<int>{0, 3}), ValidationError);
  EXPECT_THROW(domain_loss(logits, std::vector<int>{-1, 0}), ValidationError);
  EXPECT_THROW(domain_loss(logits, std::vector<int>{0}), ShapeError);
  logits.data[0] = NAN;
  EXPECT_THROW(domain_loss(logits, std::vector<int>{0, 0}), NumericError);
}

TEST(DiscriminatorConfig, Validation) {
  EXPECT_NO_THROW(validate(DiscriminatorConfig::for_targets(2), 2));
  EXPECT_THROW(validate(DiscriminatorConfig::for_targets(2), 3), ConfigError);
  auto c = DiscriminatorConfig::for_targets(2);
  c.attachment_levels.clear();
  EXPECT_THROW(validate(c, 2), ConfigError);
  c = DiscriminatorConfig::for_targets(2);
  c.attachment_levels = {detector::Level::C3, detector::Level::C3};
  EXPECT_THROW(validate(c, 2), ConfigError);
  c = DiscriminatorConfig::for_targets(2, DiscriminatorMode::kBinary);
  EXPECT_NO_THROW(validate(c, 2));
  c.num_domain_classes = 3;
  EXPECT_THROW(validate(c, 2), ConfigError);
  c = DiscriminatorConfig::for_targets(2);
  c.loss_weight = -1;
  EXPECT_THROW(validate(c, 2), ConfigError);
}

TEST(DiscriminatorConfig, DomainClassMapping) {
  const auto multi = DiscriminatorConfig::for_targets(3);
  const auto binary = DiscriminatorConfig::for_targets(3, DiscriminatorMode::kBinary);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(multi.domain_class(i), i);
    EXPECT_EQ(binary.domain_class(i), i == 0 ? 0 : 1);
  }
}

TEST(DiscriminatorConfig, JsonRoundTrip) {
  auto c = DiscriminatorConfig::for_targets(2, DiscriminatorMode::kBinary,
                                            {detector::Level::C4, detector::Level::P5});
  c.loss_weight = 0.3;
  c.sum_over_levels = false;
  nlohmann::json j = c;
  const auto back = j.get<DiscriminatorConfig>();
  EXPECT_EQ(back.attachment_levels, c.attachment_levels);
  EXPECT_EQ(back.mode, c.mode);
  EXPECT_EQ(back.num_domain_classes, 2);
  EXPECT_EQ(back.loss_weight, 0.3);
  EXPECT_FALSE(back.sum_over_levels);
}

TEST(Objective, SingleTargetModesCoincide) {
  // With one target the multiclass and binary discriminators solve the same
  // two-class problem.
  const auto ds = tiny_benchmark(2);
  const auto cfg = small_detector();
  const auto multi = DiscriminatorConfig::for_targets(1);
  const auto binary = DiscriminatorConfig::for_targets(1, DiscriminatorMode::kBinary);
  ASSERT_EQ(multi.num_domain_classes, binary.num_domain_classes);
  MdaModel<double> a(cfg, multi), b(cfg, binary);
  Rng ra(3), rb(3);
  a.init(ra);
  b.init(rb);
  std::vector<int> classes;
  for (int i = 0; i < 4; ++i) classes.push_back(multi.domain_class(i < 2 ? 0 : 1));
  for (int i = 0; i < 4; ++i) EXPECT_EQ(classes[i], binary.domain_class(i < 2 ? 0 : 1));
  const auto batch = mixed_batch(ds, cfg, classes);
  a.zero_grad();
  b.zero_grad();
  const auto va = evaluate_objective(a, batch, 0.5, true);
  const auto vb = evaluate_objective(b, batch, 0.5, true);
  EXPECT_EQ(va.l_d, vb.l_d);
  EXPECT_EQ(va.detection.total(), vb.detection.total());
  EXPECT_EQ(backbone_grads(a), backbone_grads(b));
}

TEST(Objective, LevelLossesSumOrAverage) {
  const auto ds = tiny_benchmark(3);
  const auto cfg = small_detector();
  auto disc = DiscriminatorConfig::for_targets(
      2, DiscriminatorMode::kMulticlass,
      {detector::Level::C3, detector::Level::C4, detector::Level::P4});
  disc.loss_weight = 0.1;
  MdaModel<double> model(cfg, disc);
  Rng rng(4);
  model.init(rng);
  const auto batch = mixed_batch(ds, cfg, {0, 0, 1, 2});
  const auto v = evaluate_objective(model, batch, 1.0, false);
  ASSERT_EQ(v.domain_losses.size(), 3u);
  const double sum = v.domain_losses[0] + v.domain_losses[1] + v.domain_losses[2];
  EXPECT_NEAR(v.l_d, 0.1 * sum, 1e-14);
  EXPECT_NEAR(v.adversarial_total(), v.detection.total() - 1.0 * v.l_d, 1e-14);

  disc.sum_over_levels = false;
  MdaModel<double> averaged(cfg, disc);
  averaged.copy_from(model);
  const auto w = evaluate_objective(averaged, batch, 1.0, false);
  EXPECT_NEAR(w.l_d, 0.1 * sum / 3, 1e-14);
}

TEST(Objective, ReversedGradientIsLinearInLambda) {
  // Without labeled images the backbone only sees the reversed domain
  // gradient, -lambda * dL_D/dtheta; the discriminators see dL_D/dphi
  // regardless of lambda.
  const auto ds = tiny_benchmark(5);
  const auto cfg = small_detector();
  MdaModel<double> model(cfg, DiscriminatorConfig::for_targets(2));
  Rng rng(6);
  model.init(rng);
  const auto batch = mixed_batch(ds, cfg, {0, 0, 1, 2}, 0);
  auto grads_at = [&](double lambda, std::vector<double>& disc) {
    model.zero_grad();
    evaluate_objective(model, batch, lambda, true);
    disc.clear();
    for (auto* p : model.discriminator_params()) disc.insert(disc.end(), p->grad.begin(), p->grad.end());
    return backbone_grads(model);
  };
  std::vector<double> d0, dh, d1;
  const auto g0 = grads_at(0.0, d0);
  const auto gh = grads_at(0.5, dh);
  const auto g1 = grads_at(1.0, d1);
  EXPECT_EQ(d0, d1);
  EXPECT_EQ(dh, d1);
  double norm = 0;
  for (std::size_t i = 0; i < g1.size(); ++i) {
    EXPECT_EQ(g0[i], 0.0);
    EXPECT_NEAR(gh[i], 0.5 * g1[i], 1e-12 * (1 + std::abs(g1[i])));
    norm += g1[i] * g1[i];
  }
  EXPECT_GT(norm, 0.0);

  // The same gradient with the reversal removed: finite differences of L_D
  // along the backbone gradient direction have the opposite sign.
  const double base = evaluate_objective(model, batch, 1.0, false).l_d;
  const double step = 1e-4 / std::sqrt(norm);
  std::size_t k = 0;
  for (auto* p : model.detector_params())
    if (p->name.rfind("backbone.", 0) == 0)
      for (auto& v : p->value) v += step * g1[k++];
  const double moved = evaluate_objective(model, batch, 1.0, false).l_d;
  EXPECT_LT(moved, base);
}

TEST(Objective, DomainLossOffLeavesDiscriminatorsIdle) {
  const auto ds = tiny_benchmark(7);
  const auto cfg = small_detector();
  MdaModel<double> model(cfg, DiscriminatorConfig::for_targets(2));
  Rng rng(8);
  model.init(rng);
  const auto batch = mixed_batch(ds, cfg, {0, 0, 1, 2});
  model.zero_grad();
  const auto v = evaluate_objective(model, batch, 1.0, true, {}, false);
  EXPECT_TRUE(v.domain_losses.empty());
  EXPECT_EQ(v.l_d, 0.0);
  for (auto* p : model.discriminator_params())
    for (double g : p->grad) EXPECT_EQ(g, 0.0);
}

TEST(Trainer, DomainsOrderedSourceFirst) {
  const auto ds = tiny_benchmark(9);
  const BatchComposition comp = {{0, 2}, {1, 1}, {2, 1}};
  const auto multi = adaptation_domains(ds, comp, DiscriminatorConfig::for_targets(2));
  ASSERT_EQ(multi.size(), 3u);
  EXPECT_TRUE(multi[0].labeled);
  EXPECT_FALSE(multi[1].labeled);
  EXPECT_EQ(multi[0].domain_class, 0);
  EXPECT_EQ(multi[1].domain_class, 1);
  EXPECT_EQ(multi[2].domain_class, 2);
  const auto bin = adaptation_domains(
      ds, comp, DiscriminatorConfig::for_targets(2, DiscriminatorMode::kBinary));
  EXPECT_EQ(bin[1].domain_class, 1);
  EXPECT_EQ(bin[2].domain_class, 1);
  EXPECT_THROW(adaptation_domains(ds, {{1, 2}}, DiscriminatorConfig::for_targets(1)),
               ConfigError);
}

TEST(Trainer, LambdaAndLearningRateSchedules) {
  const auto ds = tiny_benchmark(10);
  MdaModel<float> model(small_detector(), DiscriminatorConfig::for_targets(2));
  Rng rng(1);
  model.init(rng);
  TrainConfig tc;
  tc.iterations = 100;
  Trainer t(model, adaptation_domains(ds, {{0, 2}, {1, 1}, {2, 1}}, model.disc_config()), tc, rng);
  EXPECT_EQ(t.current_lambda(), 0.0);
  t.set_iteration(50);
  EXPECT_DOUBLE_EQ(t.current_lambda(), lambda_schedule(0.5));
  EXPECT_EQ(tc.learning_rate(74), 1e-3);
  EXPECT_NEAR(tc.learning_rate(75), 1e-4, 1e-18);

  tc.lambda_mode = LambdaMode::kConstant;
  tc.lambda_constant = 0.3;
  Trainer c(model, adaptation_domains(ds, {{0, 2}, {1, 1}, {2, 1}}, model.disc_config()), tc, rng);
  EXPECT_EQ(c.current_lambda(), 0.3);

  tc.domain_loss = false;
  Trainer off(model, adaptation_domains(ds, {{0, 2}, {1, 1}, {2, 1}}, model.disc_config()), tc, rng);
  EXPECT_EQ(off.current_lambda(), 0.0);
}

TEST(Trainer, ZeroIterationsLeavesModelUnchanged) {
  const auto ds = tiny_benchmark(11);
  MdaModel<float> model(small_detector(), DiscriminatorConfig::for_targets(2));
  Rng rng(2);
  model.init(rng);
  const auto before = nn::param_hash(model.params());
  TrainConfig tc;
  tc.iterations = 0;
  Trainer t(model, adaptation_domains(ds, {{0, 2}, {1, 1}, {2, 1}}, model.disc_config()), tc, rng);
  int steps = 0;
  t.run([&](const StepRecord&) { ++steps; });
  EXPECT_EQ(steps, 0);
  EXPECT_EQ(nn::param_hash(model.params()), before);
}

TEST(Trainer, StepsRecordBatchMakeup) {
  const auto ds = tiny_benchmark(12);
  MdaModel<float> model(small_detector(), DiscriminatorConfig::for_targets(2));
  Rng rng(3);
  model.init(rng);
  TrainConfig tc;
  tc.iterations = 3;
  std::ostringstream log;
  Trainer t(model, adaptation_domains(ds, {{0, 2}, {1, 1}, {2, 1}}, model.disc_config()), tc, rng,
            &log);
  std::vector<StepRecord> recs;
  t.run([&](const StepRecord& r) { recs.push_back(r); });
  ASSERT_EQ(recs.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(recs[i].iteration, i);
    EXPECT_EQ(recs[i].images, 4);
    EXPECT_EQ(recs[i].labeled_images, 2);
    EXPECT_EQ(recs[i].value.domain_losses.size(), 1u);
  }
  std::istringstream lines(log.str());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    EXPECT_TRUE(nlohmann::json::accept(line)) << line;
    ++n;
  }
  EXPECT_EQ(n, 3);
}

TEST(Trainer, EmptyPoolIsConfigError) {
  MdaModel<float> model(small_detector(), DiscriminatorConfig::for_targets(1));
  Rng rng(1);
  TrainDomain d;
  d.name = "empty";
  d.count = 2;
  EXPECT_THROW(Trainer(model, {d}, TrainConfig{}, rng), ConfigError);
  EXPECT_THROW(Trainer(model, {}, TrainConfig{}, rng), ConfigError);
}

TEST(TrainConfig, JsonRoundTrip) {
  TrainConfig c;
  c.iterations = 123;
  c.base_lr = 5e-4;
  c.lr_decay_fraction = 0.5;
  c.lambda_gamma = 5.0;
  c.augment.horizontal_flip = false;
  c.augment.max_shift = 2;
  nlohmann::json j = c;
  TrainConfig back;
  from_json(j, back);
  EXPECT_EQ(back.iterations, 123);
  EXPECT_EQ(back.base_lr, 5e-4);
  EXPECT_EQ(back.lr_decay_fraction, 0.5);
  EXPECT_EQ(back.lambda_gamma, 5.0);
  EXPECT_FALSE(back.augment.horizontal_flip);
  EXPECT_EQ(back.augment.max_shift, 2);
  // Absent keys keep what was there.
  TrainConfig partial;
  partial.iterations = 7;
  from_json(nlohmann::json{{"base_lr", 0.01}}, partial);
  EXPECT_EQ(partial.iterations, 7);
  EXPECT_EQ(partial.base_lr, 0.01);
}
