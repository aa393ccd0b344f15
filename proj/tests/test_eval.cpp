#include <gtest/gtest.h>

#include <random>

#include "mda/eval/evaluate.hpp"
#include "support/ap_oracle.hpp"

using namespace mda;
using namespace mda::eval;

namespace {

using GT = std::map<int, std::vector<BoundingBox>>;

// One domain whose test split holds the given per-image annotations.
DomainDataset labeled_split(const std::vector<std::vector<Annotation>>& per_image) {
  DomainDataset ds;
  ds.spec.domain_id = 1;
  ds.spec.name = "t";
  for (std::size_t i = 0; i < per_image.size(); ++i)
    ds.test.emplace_back(static_cast<int>(i), 1, Image(8, 8), per_image[i]);
  return ds;
}

DetectFn fixed(std::vector<std::vector<Detection>> dets) {
  return [dets](const std::vector<const Image*>& images) {
    EXPECT_EQ(images.size(), dets.size());
    return dets;
  };
}

}  // namespace

TEST(Iou, Examples) {
  const BoundingBox a{0, 0, 10, 10};
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_NEAR(iou(a, {5, 0, 15, 10}), 50.0 / 150.0, 1e-15);
  EXPECT_EQ(iou(a, {10, 0, 20, 10}), 0.0);  // touching edges
  EXPECT_EQ(iou(a, {20, 20, 30, 30}), 0.0);
  EXPECT_NEAR(iou(a, {2, 2, 4, 4}), 4.0 / 100.0, 1e-15);
}

TEST(Iou, SymmetricAndBounded) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 50);
  for (int i = 0; i < 1000; ++i) {
    const double x0 = u(rng), y0 = u(rng), x1 = u(rng), y1 = u(rng);
    const BoundingBox a{x0, y0, x0 + 1 + u(rng), y0 + 1 + u(rng)};
    const BoundingBox b{x1, y1, x1 + 1 + u(rng), y1 + 1 + u(rng)};
    const double v = iou(a, b);
    EXPECT_EQ(v, iou(b, a));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_NEAR(v, oracle::box_iou(a, b), 1e-15);
  }
}

TEST(AveragePrecision, HandExamples) {
  const BoundingBox g0{0, 0, 10, 10}, g1{20, 20, 30, 30};
  // Perfect single detection.
  EXPECT_EQ(average_precision({{0, g0, 0.9}}, GT{{0, {g0}}}), 1.0);
  // One of two objects found.
  EXPECT_EQ(average_precision({{0, g0, 0.9}}, GT{{0, {g0, g1}}}), 0.5);
  // Only a miss.
  EXPECT_EQ(average_precision({{0, {40, 40, 50, 50}, 0.9}}, GT{{0, {g0}}}), 0.0);
  // TP, FP, TP: precisions 1, 1/2, 2/3 at recalls 1/2, 1/2, 1.
  EXPECT_NEAR(average_precision({{0, g0, 0.9}, {0, {40, 40, 50, 50}, 0.8}, {0, g1, 0.7}},
                                GT{{0, {g0, g1}}}),
              0.5 + 0.5 * 2.0 / 3.0, 1e-15);
  // A duplicate on an already matched object is a false positive.
  EXPECT_NEAR(average_precision({{0, g0, 0.9}, {0, g0, 0.8}, {0, g1, 0.7}}, GT{{0, {g0, g1}}}),
              0.5 + 0.5 * 2.0 / 3.0, 1e-15);
  // Detections only match ground truth of their own image.
  EXPECT_EQ(average_precision({{1, g0, 0.9}}, GT{{0, {g0}}}), 0.0);
}

TEST(AveragePrecision, NoGroundTruthOrNoDetections) {
  EXPECT_EQ(average_precision({{0, {0, 0, 1, 1}, 0.5}}, GT{}), kNotPresent);
  EXPECT_EQ(average_precision({}, GT{{0, {}}}), kNotPresent);
  EXPECT_EQ(average_precision({}, GT{{0, {{0, 0, 1, 1}}}}), 0.0);
  EXPECT_EQ(mean_ap({kNotPresent, kNotPresent}), 0.0);
  EXPECT_EQ(mean_ap({0.5, kNotPresent, 1.0}), 0.75);
}

TEST(AveragePrecision, ThresholdIsInclusive) {
  const BoundingBox g{0, 0, 10, 10};
  const BoundingBox half{0, 0, 10, 5};  // IoU exactly 0.5
  EXPECT_EQ(average_precision({{0, half, 0.9}}, GT{{0, {g}}}, 0.5), 1.0);
  EXPECT_EQ(average_precision({{0, half, 0.9}}, GT{{0, {g}}}, 0.51), 0.0);
}

TEST(AveragePrecision, GreedyTakesHighestIouUnmatched) {
  // The top detection overlaps both objects but g0 more; the second can then
  // only take g1.
  const BoundingBox g0{0, 0, 10, 10}, g1{6, 0, 16, 10};
  const BoundingBox d0{1, 0, 11, 10}, d1{5, 0, 15, 10};
  const auto pr = precision_recall({{0, d0, 0.9}, {0, d1, 0.8}}, GT{{0, {g0, g1}}}, 0.5);
  EXPECT_EQ(pr.true_positive, (std::vector<bool>{true, true}));
  EXPECT_EQ(pr.recall.back(), 1.0);
}

TEST(AveragePrecision, MatchesBruteForceOracle) {
  std::mt19937_64 rng(2024);
  int compared = 0;
  for (int i = 0; i < 200; ++i) {
    const auto inst = oracle::random_instance(rng);
    for (double thr : {0.5, 0.3, 0.7}) {
      const double ours = average_precision(inst.detections, inst.ground_truth, thr);
      const double ref = oracle::brute_force_ap(inst, thr);
      ASSERT_NEAR(ours, ref, 1e-9) << "instance " << i << " threshold " << thr;
      compared += ref >= 0;
    }
  }
  EXPECT_GT(compared, 300);
}

TEST(AveragePrecision, InvariantToMonotoneScoreRescaling) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 50; ++i) {
    auto inst = oracle::random_instance(rng);
    const double before = average_precision(inst.detections, inst.ground_truth);
    for (auto& d : inst.detections) d.score = 0.01 + 0.5 * d.score * d.score;
    EXPECT_EQ(average_precision(inst.detections, inst.ground_truth), before);
  }
}

TEST(AveragePrecision, AddingTopScoredTruePositiveNeverHurts) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 100; ++i) {
    auto inst = oracle::random_instance(rng);
    if (inst.ground_truth.empty()) continue;
    const auto& [img, boxes] = *inst.ground_truth.begin();
    if (boxes.empty()) continue;
    // A perfect hit on an object nothing else matches yet, scored above all.
    bool taken = false;
    for (const auto& d : inst.detections)
      taken |= d.image == img && oracle::box_iou(d.box, boxes[0]) >= 0.5;
    if (taken) continue;
    const double before = average_precision(inst.detections, inst.ground_truth);
    inst.detections.push_back({img, boxes[0], 2.0});
    EXPECT_GE(average_precision(inst.detections, inst.ground_truth), before - 1e-12);
  }
}

TEST(Evaluate, PerfectAndEmptyDetectors) {
  const std::vector<std::vector<Annotation>> gt = {
      {{{0, 0, 4, 4}, 0}, {{4, 4, 8, 8}, 2}}, {{{1, 1, 5, 5}, 0}}, {}};
  const auto ds = labeled_split(gt);
  std::vector<std::vector<Detection>> perfect;
  for (const auto& anns : gt) {
    perfect.emplace_back();
    for (const auto& a : anns) perfect.back().push_back({a.box, a.class_id, 0.9});
  }
  const auto r = evaluate(fixed(perfect), {ds}, 3);
  EXPECT_EQ(r.domains[0].map, 1.0);
  EXPECT_EQ(r.domains[0].ap[1], kNotPresent);
  EXPECT_EQ(r.domains[0].ground_truth_count, (std::vector<int>{2, 0, 1}));
  const auto e = evaluate(fixed({{}, {}, {}}), {ds}, 3);
  EXPECT_EQ(e.domains[0].map, 0.0);
}

TEST(Evaluate, RandomMultiClassMatchesOraclePerClass) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> pos(0, 50), size(5, 14), jitter(-3, 3);
  std::uniform_int_distribution<int> cls(0, 2), count(0, 4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<Annotation>> gt(5);
    std::vector<std::vector<Detection>> dets(5);
    for (int i = 0; i < 5; ++i) {
      for (int k = count(rng); k > 0; --k) {
        const double x = pos(rng), y = pos(rng);
        gt[i].push_back({{x, y, x + size(rng), y + size(rng)}, cls(rng)});
      }
      for (const auto& a : gt[i])
        if (rng() % 4 != 0)
          dets[i].push_back({{a.box.x_min + jitter(rng), a.box.y_min + jitter(rng),
                              a.box.x_max + jitter(rng), a.box.y_max + jitter(rng)},
                             rng() % 5 == 0 ? cls(rng) : a.class_id, (rng() % 20 + 1) / 20.0});
      for (int k = count(rng); k > 0; --k) {
        const double x = pos(rng), y = pos(rng);
        dets[i].push_back({{x, y, x + size(rng), y + size(rng)}, cls(rng), (rng() % 20 + 1) / 20.0});
      }
    }
    const auto r = evaluate(fixed(dets), {labeled_split(gt)}, 3);
    double sum = 0;
    int present_classes = 0;
    for (int c = 0; c < 3; ++c) {
      oracle::Instance inst;
      for (int i = 0; i < 5; ++i) {
        for (const auto& a : gt[i])
          if (a.class_id == c) inst.ground_truth[i].push_back(a.box);
        for (const auto& d : dets[i])
          if (d.class_id == c) inst.detections.push_back({i, d.box, d.score});
      }
      const double ref = oracle::brute_force_ap(inst, 0.5);
      EXPECT_NEAR(r.domains[0].ap[c], ref, 1e-9);
      if (ref >= 0) {
        sum += ref;
        ++present_classes;
      }
    }
    EXPECT_NEAR(r.domains[0].map, present_classes ? sum / present_classes : 0.0, 1e-9);
  }
}

TEST(Evaluate, RejectsBadInputs) {
  const auto ds = labeled_split({{{{0, 0, 4, 4}, 0}}});
  EXPECT_THROW(evaluate(fixed({{}}), {ds}, 1, 0.0), ValidationError);
  EXPECT_THROW(evaluate(fixed({{}}), {ds}, 1, 1.5), ValidationError);
  auto bad = labeled_split({{{{0, 0, 4, 4}, 3}}});
  EXPECT_THROW(evaluate(fixed({{}}), {bad}, 2), ValidationError);
  auto unlabeled = ds;
  unlabeled.test[0] = unlabeled.test[0].sealed();
  EXPECT_THROW(evaluate(fixed({{}}), {unlabeled}, 1), ValidationError);
}

TEST(EvalReport, TextJsonAndDigest) {
  const auto ds = labeled_split({{{{0, 0, 4, 4}, 0}}, {{{2, 2, 6, 6}, 1}}});
  const auto r = evaluate(fixed({{{{0, 0, 4, 4}, 0, 0.8}}, {{{0, 0, 3, 3}, 1, 0.4}}}), {ds}, 2);
  EXPECT_EQ(r.domains[0].ap[0], 1.0);
  EXPECT_EQ(r.domains[0].ap[1], 0.0);
  const std::string text = r.to_text();
  EXPECT_NE(text.find("domain 1 t mAP 0.5"), std::string::npos) << text;
  nlohmann::json j = r;
  const auto back = j.get<EvalReport>();
  EXPECT_EQ(back.to_text(), text);
  EXPECT_EQ(back.digest(), r.digest());
  auto changed = r;
  changed.domains[0].ap[1] = 1e-17;
  EXPECT_NE(changed.digest(), r.digest());
  EXPECT_NE(r.find(1), nullptr);
  EXPECT_EQ(r.find(7), nullptr);
}
