#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "gtest/gtest.h"

#include "clbias/data/scenario.hpp"
#include "clbias/metrics/cka.hpp"
#include "clbias/metrics/metrics.hpp"
#include "test_util.hpp"

namespace clbias {
namespace {

using data::BiasedSample;
using data::StreamGeometry;
using metrics::AccuracyMatrix;
using nn::HeadMode;
using nn::MlpModel;

BiasedSample sample1d(double x, int cls, int group = 0, int task = 0) {
  BiasedSample s;
  s.features = Eigen::VectorXd::Constant(1, x);
  s.cls = cls;
  s.group = group;
  s.task = task;
  return s;
}

// single head over one feature: class 0 iff x > 0
MlpModel sign_model() {
  MlpModel m;
  m.head_mode = HeadMode::kSingle;
  Eigen::MatrixXd w(2, 1);
  w << 1.0, -1.0;
  m.heads.push_back({w, Eigen::VectorXd::Zero(2)});
  return m;
}

HeadLayout one_task_layout() { return test::simple_layout(HeadMode::kSingle, {2}); }

TEST(Accuracy, PerfectAndConstantModels) {
  const HeadLayout layout = one_task_layout();
  std::vector<BiasedSample> samples = {sample1d(2.0, 0), sample1d(-1.0, 1),
                                       sample1d(0.5, 0), sample1d(-3.0, 1)};
  EXPECT_DOUBLE_EQ(metrics::accuracy(sign_model(), layout, samples, 0), 1.0);

  MlpModel constant;
  constant.head_mode = HeadMode::kSingle;
  constant.heads.push_back({Eigen::MatrixXd::Zero(2, 1), Eigen::VectorXd::Zero(2)});
  // all-zero logits: argmax ties break to the first class -> 1/c on a
  // balanced set
  EXPECT_DOUBLE_EQ(metrics::accuracy(constant, layout, samples, 0), 0.5);
}

TEST(Accuracy, MatchesCountingOracle) {
  const HeadLayout layout = one_task_layout();
  Rng rng(3);
  std::vector<BiasedSample> samples;
  for (int i = 0; i < 101; ++i)
    samples.push_back(sample1d(rng.normal(), static_cast<int>(rng.below(2))));
  const MlpModel m = sign_model();
  long correct = 0;
  for (const auto& s : samples) {
    const int pred = s.features[0] > 0.0 ? 0 : 1;
    if (pred == s.cls) ++correct;
  }
  EXPECT_DOUBLE_EQ(metrics::accuracy(m, layout, samples, 0),
                   static_cast<double>(correct) / samples.size());
}

TEST(Accuracy, EmptyDatasetThrows) {
  EXPECT_THROW(metrics::accuracy(sign_model(), one_task_layout(), {}, 0),
               std::invalid_argument);
}

TEST(Forgetting, SpecMatrixAndSigns) {
  AccuracyMatrix a;
  a.rows = {{0.9}, {0.7, 0.8}};
  EXPECT_NEAR(metrics::forgetting(a, 2), 0.2, 1e-15);

  AccuracyMatrix none;
  none.rows = {{0.9}, {0.9, 0.8}};
  EXPECT_DOUBLE_EQ(metrics::forgetting(none, 2), 0.0);

  AccuracyMatrix backward;
  backward.rows = {{0.6}, {0.8, 0.7}};
  EXPECT_LT(metrics::forgetting(backward, 2), 0.0);

  EXPECT_THROW(metrics::forgetting(a, 1), std::invalid_argument);
}

TEST(Intransigence, SpecValuesAndSigns) {
  AccuracyMatrix a;
  a.rows = {{0.8}, {0.1, 0.8}};
  a.reference_diag = {0.9, 0.85};
  EXPECT_NEAR(metrics::intransigence(a, 2), 0.075, 1e-15);

  AccuracyMatrix same;
  same.rows = {{0.9}, {0.5, 0.85}};
  same.reference_diag = {0.9, 0.85};
  EXPECT_DOUBLE_EQ(metrics::intransigence(same, 2), 0.0);

  AccuracyMatrix better;
  better.rows = {{0.95}, {0.5, 0.9}};
  better.reference_diag = {0.9, 0.85};
  EXPECT_LT(metrics::intransigence(better, 2), 0.0);

  AccuracyMatrix missing;
  missing.rows = {{0.8}};
  EXPECT_THROW(metrics::intransigence(missing, 1), std::invalid_argument);
}

TEST(NormalizeFi, MinMaxAndInvariance) {
  const auto r = metrics::normalize_fi({2.0, 5.0, 8.0});
  EXPECT_FALSE(r.degenerate);
  EXPECT_DOUBLE_EQ(r.values[0], 0.0);
  EXPECT_DOUBLE_EQ(r.values[1], 0.5);
  EXPECT_DOUBLE_EQ(r.values[2], 1.0);

  // affine transform leaves the output unchanged
  const auto affine =
      metrics::normalize_fi({2.0 * 3.0 - 1.0, 5.0 * 3.0 - 1.0, 8.0 * 3.0 - 1.0});
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(affine.values[i], r.values[i], 1e-12);

  const auto degenerate = metrics::normalize_fi({4.0, 4.0, 4.0});
  EXPECT_TRUE(degenerate.degenerate);
  for (double v : degenerate.values) EXPECT_DOUBLE_EQ(v, 0.5);

  EXPECT_THROW(metrics::normalize_fi({1.0}), std::invalid_argument);
}

std::vector<std::pair<BiasedSample, BiasedSample>> handmade_pairs() {
  // sign model: 12 pairs, 10 originals correct, 3 of those flip to errors
  std::vector<std::pair<BiasedSample, BiasedSample>> pairs;
  for (int i = 0; i < 7; ++i)
    pairs.push_back({sample1d(1.0, 0), sample1d(2.0, 0)});  // correct, flip fine
  for (int i = 0; i < 3; ++i)
    pairs.push_back({sample1d(1.0, 0), sample1d(-2.0, 0)});  // correct, flip wrong
  pairs.push_back({sample1d(-1.0, 0), sample1d(1.0, 0)});    // original wrong
  pairs.push_back({sample1d(2.0, 1), sample1d(2.0, 1)});     // original wrong
  return pairs;
}

TEST(Bmr, CountsByDefinition) {
  const auto pairs = handmade_pairs();
  const auto r = metrics::bmr(sign_model(), one_task_layout(), pairs, 0);
  ASSERT_TRUE(r.has_value());
  EXPECT_DOUBLE_EQ(*r, 0.3);
}

TEST(Bmr, MatchesTwoPassCountingOracle) {
  data::ScenarioConfig cfg;
  cfg.preset = "two-task-forward";
  cfg.levels = {6};
  cfg.seed = 12;
  cfg.n_train = 20;
  cfg.n_test = 30;
  const auto stream = data::make_scenario(cfg);
  const HeadLayout layout = make_layout(stream, 1);
  const MlpModel m =
      test::random_model(stream.geometry.dim(), {8}, {2}, HeadMode::kMulti, 9);
  const auto got = metrics::bmr(m, layout, stream.test[0], 0);
  // independent two-pass count
  long correct = 0, flip_wrong = 0;
  for (const auto& [o, f] : stream.test[0]) {
    const auto po = metrics::predict(m, layout, {o}, 0);
    if (po[0] != o.cls) continue;
    ++correct;
    const auto pf = metrics::predict(m, layout, {f}, 0);
    if (pf[0] != o.cls) ++flip_wrong;
  }
  if (correct == 0) {
    EXPECT_FALSE(got.has_value());
  } else {
    ASSERT_TRUE(got.has_value());
    EXPECT_DOUBLE_EQ(*got, static_cast<double>(flip_wrong) / correct);
  }
}

TEST(Bmr, SpuriousBlindModelScoresZero) {
  // model reading only core coordinates: flips change nothing it sees
  data::ScenarioConfig cfg;
  cfg.preset = "two-task-forward";
  cfg.levels = {6};
  cfg.seed = 13;
  cfg.n_train = 20;
  cfg.n_test = 40;
  const auto stream = data::make_scenario(cfg);
  const HeadLayout layout = make_layout(stream, 1);
  MlpModel m;
  m.head_mode = HeadMode::kMulti;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(2, stream.geometry.dim());
  for (int c = 0; c < 2; ++c)
    w.row(c).head(stream.geometry.core_dim) =
        data::detail::class_prototype(stream.geometry, c).transpose();
  m.heads.push_back({w, Eigen::VectorXd::Zero(2)});
  const auto r = metrics::bmr(m, layout, stream.test[0], 0);
  ASSERT_TRUE(r.has_value());
  EXPECT_DOUBLE_EQ(*r, 0.0);
}

TEST(Bmr, SpuriousOnlyModelScoresOne) {
  data::ScenarioConfig cfg;
  cfg.preset = "two-task-forward";
  cfg.levels = {6};
  cfg.seed = 14;
  cfg.n_train = 20;
  cfg.n_test = 40;
  const auto stream = data::make_scenario(cfg);
  const HeadLayout layout = make_layout(stream, 1);
  MlpModel m;
  m.head_mode = HeadMode::kMulti;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(2, stream.geometry.dim());
  const Eigen::VectorXd u = data::spurious_direction(stream.geometry);
  w.row(0).segment(stream.geometry.spurious_offset(0), stream.geometry.spurious_dim) =
      u.transpose();
  w.row(1).segment(stream.geometry.spurious_offset(0), stream.geometry.spurious_dim) =
      -u.transpose();
  m.heads.push_back({w, Eigen::VectorXd::Zero(2)});
  const auto r = metrics::bmr(m, layout, stream.test[0], 0);
  ASSERT_TRUE(r.has_value());
  EXPECT_DOUBLE_EQ(*r, 1.0);
}

TEST(Bmr, AbsentWhenNothingCorrect) {
  // an all-zero model predicts class 0 everywhere; feed only class-1
  // originals
  std::vector<std::pair<BiasedSample, BiasedSample>> pairs = {
      {sample1d(1.0, 1), sample1d(1.0, 1)}, {sample1d(2.0, 1), sample1d(2.0, 1)}};
  MlpModel constant;
  constant.head_mode = HeadMode::kSingle;
  constant.heads.push_back({Eigen::MatrixXd::Zero(2, 1), Eigen::VectorXd::Zero(2)});
  const auto r = metrics::bmr(constant, one_task_layout(), pairs, 0);
  EXPECT_FALSE(r.has_value());
}

TEST(Bmr, InvariantToSampleOrder) {
  auto pairs = handmade_pairs();
  const auto a = metrics::bmr(sign_model(), one_task_layout(), pairs, 0);
  std::reverse(pairs.begin(), pairs.end());
  const auto b = metrics::bmr(sign_model(), one_task_layout(), pairs, 0);
  EXPECT_EQ(a, b);
}

TEST(Dca, HandValuesAndSymmetry) {
  const HeadLayout layout = one_task_layout();
  const MlpModel m = sign_model();
  // class 0: group accuracies 0.9 vs 0.7; class 1: 0.8 vs 0.8
  // -> DCA = (0.2 + 0) / 2 = 0.1
  std::vector<BiasedSample> samples;
  for (int i = 0; i < 10; ++i) samples.push_back(sample1d(i < 9 ? 1.0 : -1.0, 0, 0));
  for (int i = 0; i < 10; ++i) samples.push_back(sample1d(i < 7 ? 1.0 : -1.0, 0, 1));
  for (int i = 0; i < 10; ++i) samples.push_back(sample1d(i < 8 ? -1.0 : 1.0, 1, 0));
  for (int i = 0; i < 10; ++i) samples.push_back(sample1d(i < 8 ? -1.0 : 1.0, 1, 1));
  EXPECT_NEAR(metrics::dca(m, layout, samples, 0), 0.1, 1e-15);

  // permuting group labels leaves DCA unchanged
  std::vector<BiasedSample> swapped = samples;
  for (auto& s : swapped) s.group ^= 1;
  EXPECT_DOUBLE_EQ(metrics::dca(m, layout, swapped, 0),
                   metrics::dca(m, layout, samples, 0));

  // order invariance
  std::vector<BiasedSample> shuffled = samples;
  std::reverse(shuffled.begin(), shuffled.end());
  EXPECT_DOUBLE_EQ(metrics::dca(m, layout, shuffled, 0),
                   metrics::dca(m, layout, samples, 0));
}

TEST(Dca, EqualAccuraciesGiveZeroAndEmptyCellThrows) {
  const HeadLayout layout = one_task_layout();
  std::vector<BiasedSample> balanced;
  for (int g = 0; g < 2; ++g)
    for (int i = 0; i < 5; ++i) {
      balanced.push_back(sample1d(1.0, 0, g));
      balanced.push_back(sample1d(-1.0, 1, g));
    }
  EXPECT_DOUBLE_EQ(metrics::dca(sign_model(), layout, balanced, 0), 0.0);

  std::vector<BiasedSample> missing = {sample1d(1.0, 0, 0), sample1d(-1.0, 1, 0),
                                       sample1d(-1.0, 1, 1)};
  EXPECT_THROW(metrics::dca(sign_model(), layout, missing, 0), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// CKA

Eigen::MatrixXd random_matrix(int n, int p, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd x(n, p);
  for (long i = 0; i < x.size(); ++i) x(i) = rng.normal();
  return x;
}

TEST(Cka, IdentityScalingOrthogonality) {
  const Eigen::MatrixXd x = random_matrix(20, 5, 1);
  EXPECT_NEAR(metrics::cka_linear(x, x), 1.0, 1e-12);
  EXPECT_NEAR(metrics::cka_linear(x, -2.5 * x), 1.0, 1e-12);

  // centered matrices with X'Y = 0 give 0
  Eigen::MatrixXd a(4, 1), b(4, 1);
  a << 1, 1, -1, -1;
  b << 1, -1, 1, -1;
  EXPECT_NEAR(metrics::cka_linear(a, b), 0.0, 1e-15);
}

TEST(Cka, SymmetryRotationInvarianceAndBounds) {
  for (int trial = 0; trial < 25; ++trial) {
    const Eigen::MatrixXd x = random_matrix(12, 4, 100 + trial);
    const Eigen::MatrixXd y = random_matrix(12, 6, 200 + trial);
    const double xy = metrics::cka_linear(x, y);
    const double yx = metrics::cka_linear(y, x);
    ASSERT_NEAR(xy, yx, 1e-12);
    ASSERT_GE(xy, -1e-9);
    ASSERT_LE(xy, 1.0 + 1e-9);
    // orthogonal rotation of the columns of either argument
    Rng rot_rng(300 + trial);
    const Eigen::MatrixXd q = data::detail::random_rotation(4, rot_rng);
    ASSERT_NEAR(metrics::cka_linear(x * q, y), xy, 1e-9);
  }
}

TEST(Cka, ZeroVarianceInputThrows) {
  const Eigen::MatrixXd x = random_matrix(8, 3, 5);
  const Eigen::MatrixXd constant = Eigen::MatrixXd::Ones(8, 3);
  EXPECT_THROW(metrics::cka_linear(x, constant), std::invalid_argument);
}

TEST(CkaBiasProbe, SpuriousBlindModelScoresOne) {
  data::ScenarioConfig cfg;
  cfg.preset = "two-task-forward";
  cfg.levels = {3};
  cfg.seed = 15;
  cfg.n_train = 10;
  cfg.n_test = 20;
  const auto stream = data::make_scenario(cfg);
  // trunk reads only core coordinates
  MlpModel m;
  m.head_mode = HeadMode::kMulti;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(6, stream.geometry.dim());
  Rng rng(44);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < stream.geometry.core_dim; ++c) w(r, c) = rng.normal();
  m.trunk.push_back({w, Eigen::VectorXd::Zero(6)});
  m.heads.push_back({Eigen::MatrixXd::Zero(2, 6), Eigen::VectorXd::Zero(2)});
  EXPECT_NEAR(metrics::cka_bias_probe(m, stream.test[0]), 1.0, 1e-9);
}

TEST(CkaBiasProbe, DecreasesWithSpuriousStrength) {
  // a model whose ReLU features mix core and spurious inputs: the flip
  // perturbation grows with the spurious strength, so the representations of
  // the two groups drift apart. (A purely linear feature map would be blind
  // here: negating the spurious block is an orthogonal transform. Very large
  // strengths saturate the ReLUs and the similarity climbs back up, so the
  // check covers the moderate regime.)
  double prev = 2.0;
  for (double s : {0.125, 0.25, 0.5, 1.0}) {
    data::ScenarioConfig cfg;
    cfg.preset = "two-task-forward";
    cfg.levels = {3};
    cfg.seed = 16;
    cfg.n_train = 10;
    cfg.n_test = 30;
    cfg.geometry.spurious_strength = s;
    const auto stream = data::make_scenario(cfg);
    const MlpModel m =
        test::random_model(stream.geometry.dim(), {16}, {2}, HeadMode::kMulti, 4242);
    const double cka = metrics::cka_bias_probe(m, stream.test[0]);
    EXPECT_LT(cka, prev) << "strength " << s;
    prev = cka;
  }
}

TEST(CkaBiasProbe, MissingPairingThrows) {
  MlpModel m;
  m.heads.push_back({Eigen::MatrixXd::Zero(2, 3), Eigen::VectorXd::Zero(2)});
  EXPECT_THROW(metrics::cka_bias_probe(m, {}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// misclassification breakdown

TEST(Breakdown, RatesSumToBmrAndPartitionChecked) {
  // single head over classes {0, 1, 2}
  MlpModel m;
  m.head_mode = HeadMode::kSingle;
  Eigen::MatrixXd w(3, 1);
  w << 1.0, -1.0, 0.0;
  m.heads.push_back({w, Eigen::VectorXd::Zero(3)});
  HeadLayout layout = test::simple_layout(HeadMode::kSingle, {2, 1});

  std::vector<std::pair<BiasedSample, BiasedSample>> pairs;
  pairs.push_back({sample1d(1.0, 0), sample1d(1.0, 0)});   // correct, flip fine
  pairs.push_back({sample1d(1.0, 0), sample1d(-1.0, 0)});  // flips to class 1 (old)
  pairs.push_back({sample1d(1.0, 0), sample1d(2.0, 0)});   // correct, flip fine
  pairs.push_back({sample1d(-2.0, 1), sample1d(1.0, 1)});  // flips to class 0 (new)
  metrics::ClassPartition partition;
  partition.old_classes = {1};
  partition.new_classes = {0};
  partition.bias_class = 2;
  const auto b = metrics::misclass_breakdown(m, layout, pairs, 1, partition);
  EXPECT_EQ(b.correct, 4);
  EXPECT_EQ(b.to_old, 1);
  EXPECT_EQ(b.to_new, 1);
  EXPECT_EQ(b.to_bias, 0);
  ASSERT_TRUE(b.total().has_value());
  EXPECT_DOUBLE_EQ(*b.total(), b.old_rate() + b.new_rate() + b.bias_rate());
  const auto direct = metrics::bmr(m, layout, pairs, 1);
  EXPECT_DOUBLE_EQ(*b.total(), *direct);

  metrics::ClassPartition bad = partition;
  bad.old_classes = {};
  EXPECT_THROW(metrics::misclass_breakdown(m, layout, pairs, 1, bad),
               std::invalid_argument);

  // paper-style totals add up (format check)
  EXPECT_NEAR(4.52 + 7.74 + 4.02, 16.28, 1e-9);
}

TEST(Breakdown, NoBiasClassInStreamGivesZeroBiasRate) {
  MlpModel m = sign_model();  // never predicts a third class
  HeadLayout layout = test::simple_layout(HeadMode::kSingle, {2});
  std::vector<std::pair<BiasedSample, BiasedSample>> pairs = {
      {sample1d(1.0, 0), sample1d(-1.0, 0)}, {sample1d(-1.0, 1), sample1d(1.0, 1)}};
  metrics::ClassPartition partition;
  partition.old_classes = {0};
  partition.new_classes = {1};
  partition.bias_class = -7;  // no bias class anywhere in the stream
  const auto b = metrics::misclass_breakdown(m, layout, pairs, 0, partition);
  EXPECT_EQ(b.to_bias, 0);
  EXPECT_EQ(b.correct, 2);
  EXPECT_EQ(b.to_old + b.to_new, 2);
}

}  // namespace
}  // namespace clbias
