#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "nls/eval/ablation.hpp"
#include "oracles.hpp"

namespace nls::eval {
namespace {

DepthMap depth(int w, int h, std::vector<float> v) {
  DepthMap m(w, h);
  m.values = std::move(v);
  return m;
}

ClassMap classes(int w, int h, std::vector<std::uint8_t> v) {
  ClassMap m(w, h);
  m.values = std::move(v);
  return m;
}

Plane<double> random_depth(std::mt19937_64& rng, int w, int h) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Plane<double> m(w, h);
  for (auto& v : m.values) v = u(rng);
  return m;
}

TEST(SiDepth, HandCases) {
  const auto ref = depth(2, 1, {1, 1});
  EXPECT_EQ(si_depth_error(ref, ref), 0.0);
  const double ln2 = std::log(2.0);
  const double oracle = 0.5 * (0 + ln2 * ln2) - 0.25 * ln2 * ln2;
  EXPECT_NEAR(si_depth_error(depth(2, 1, {1, 2}), ref), oracle, 1e-15);
  EXPECT_NEAR(si_depth_error(depth(2, 1, {1, 2}), ref), 0.12011, 1e-4);
}

TEST(SiDepth, ScaleInvariance) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto pred = random_depth(rng, 7, 5), ref = random_depth(rng, 7, 5);
    const double base = si_depth_error(pred, ref);
    for (double c : {0.1, 1.0, 10.0}) {
      Plane<double> scaled = pred, scaled_ref = ref;
      for (auto& v : scaled.values) v *= c;
      for (auto& v : scaled_ref.values) v *= c;
      EXPECT_LT(std::abs(si_depth_error(scaled, ref) - base), 1e-9);
      EXPECT_LT(std::abs(si_depth_error(pred, scaled_ref) - base), 1e-9);
    }
  }
}

TEST(SiDepth, RejectsNonPositiveDepthNamingThePixel) {
  const auto ref = depth(2, 2, {1, 1, 1, 1});
  try {
    si_depth_error(depth(2, 2, {1, 1, 0, 1}), ref);
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("(1, 0)"), std::string::npos) << e.what();
  }
  EXPECT_THROW(si_depth_error(depth(1, 2, {1, 1}), ref), ShapeError);
}

TEST(MeanIou, HandCases) {
  const auto gt = classes(2, 2, {0, 0, 1, 1});
  const auto pred = classes(2, 2, {0, 1, 1, 1});
  const auto r = mean_iou(pred, gt, 4);
  EXPECT_EQ(r.miou, 7.0 / 12.0);
  EXPECT_EQ(*r.per_class[0], 0.5);
  EXPECT_EQ(*r.per_class[1], 2.0 / 3.0);
  EXPECT_FALSE(r.per_class[2]);
  EXPECT_EQ(mean_iou(gt, gt, 4).miou, 1.0);
  EXPECT_EQ(mean_iou(classes(2, 1, {0, 0}), classes(2, 1, {1, 1}), 2).miou, 0.0);
  EXPECT_THROW(mean_iou(gt, classes(1, 1, {0}), 4), ShapeError);
  EXPECT_THROW(mean_iou(gt, classes(2, 2, {0, 0, 5, 1}), 4), ParameterError);
}

TEST(MeanIou, SymmetricAndBounded) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> cls(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    ClassMap a(6, 6), b(6, 6);
    for (auto& v : a.values) v = static_cast<std::uint8_t>(cls(rng));
    for (auto& v : b.values) v = static_cast<std::uint8_t>(cls(rng));
    const double ab = mean_iou(a, b, 4).miou;
    EXPECT_EQ(ab, mean_iou(b, a, 4).miou);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

Eigen::MatrixXd random_features(std::mt19937_64& rng, int rows, int cols, double shift) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng) + shift;
  // Correlate the columns so the covariances are not near-diagonal.
  Eigen::MatrixXd mix = Eigen::MatrixXd::Identity(cols, cols);
  for (int c = 1; c < cols; ++c) mix(c - 1, c) = 0.6;
  return m * mix;
}

TEST(Frechet, AnalyticOneDimensional) {
  Eigen::MatrixXd a(2, 1), b(2, 1);
  a << -1, 1;
  b << 0, 2;
  EXPECT_NEAR(frechet_feature_distance(a, b), 1.0, 1e-6);
  Eigen::MatrixXd c(3, 1);
  c << -2, 0, 2;  // mean 0, sd 2 vs sd sqrt(2)
  const double sd_gap = 2 - std::sqrt(2.0);
  EXPECT_NEAR(frechet_feature_distance(a, c), sd_gap * sd_gap, 1e-12);
}

TEST(Frechet, MatchesDirectOracleAndIsSymmetric) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_features(rng, 40, 5, 0.0), b = random_features(rng, 30, 5, 0.3);
    const double d = frechet_feature_distance(a, b);
    EXPECT_NEAR(d, oracle::frechet_direct(a, b), 1e-5);
    EXPECT_NEAR(d, frechet_feature_distance(b, a), 1e-6);
    EXPECT_NEAR(frechet_feature_distance(a, a), 0.0, 1e-6);
  }
}

TEST(Frechet, NeedsEnoughRows) {
  std::mt19937_64 rng(4);
  EXPECT_THROW(frechet_feature_distance(random_features(rng, 5, 5, 0), random_features(rng, 10, 5, 0)), ParameterError);
  EXPECT_THROW(frechet_feature_distance(random_features(rng, 10, 4, 0), random_features(rng, 10, 5, 0)), ShapeError);
}

Image flat(std::uint8_t v) {
  Image im(4, 4);
  std::fill(im.rgb.begin(), im.rgb.end(), v);
  return im;
}

Eigen::VectorXd mean_rgb(const Image& im) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(3);
  for (std::size_t i = 0; i < im.rgb.size(); ++i) f(static_cast<Eigen::Index>(i % 3)) += im.rgb[i];
  return f / (im.rgb.size() / 3.0);
}

TEST(Diversity, Properties) {
  const std::vector<Image> same{flat(10), flat(10), flat(10)};
  EXPECT_EQ(pairwise_diversity(same, mean_rgb), 0.0);
  const std::vector<Image> two{flat(10), flat(40)};
  EXPECT_NEAR(pairwise_diversity(two, mean_rgb), 30.0, 1e-12);
  std::vector<Image> many{flat(1), flat(50), flat(7), flat(200), flat(90)};
  const double d = pairwise_diversity(many, mean_rgb);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 10; ++i) {
    std::shuffle(many.begin(), many.end(), rng);
    EXPECT_NEAR(pairwise_diversity(many, mean_rgb), d, 1e-12);
  }
  EXPECT_THROW(pairwise_diversity(std::vector<Image>{flat(1)}, mean_rgb), ParameterError);
}

TEST(Spearman, RanksAndDegenerateCases) {
  const std::vector<double> n{1, 4, 16};
  EXPECT_DOUBLE_EQ(*spearman(n, std::vector<double>{0.2, 0.5, 0.9}), 1.0);
  EXPECT_DOUBLE_EQ(*spearman(n, std::vector<double>{3, 2, 1}), -1.0);
  EXPECT_DOUBLE_EQ(*spearman(n, std::vector<double>{0.1, 0.9, 0.5}), 0.5);
  EXPECT_FALSE(spearman(std::vector<double>{1}, std::vector<double>{2}));
  EXPECT_FALSE(spearman(n, std::vector<double>{1, 1, 1}));
  // Ties share the average rank: ranks (1.5, 1.5, 3) against (1, 2, 3).
  EXPECT_NEAR(*spearman(n, std::vector<double>{5, 5, 8}), std::sqrt(0.75), 1e-12);
}

TEST(Ablation, TableAndTrend) {
  auto fake = [](int n) {
    EvalReport r;
    r.miou = 0.3 + 0.01 * n;
    r.si_depth = 0.1;
    r.diversity = 1.0 / n;
    return r;
  };
  const auto rows = ablate_components({1, 4, 16}, fake);
  const auto csv = ablation_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  const auto t = ablation_trend(rows);
  EXPECT_DOUBLE_EQ(*t.miou, 1.0);
  EXPECT_DOUBLE_EQ(*t.diversity, -1.0);
  EXPECT_FALSE(t.si_depth);
  EXPECT_FALSE(t.frechet);

  const auto single = ablate_components({4}, fake);
  ASSERT_EQ(single.size(), 1u);
  const auto js = to_json(ablation_trend(single));
  EXPECT_EQ(js["spearman_vs_n"]["miou"], "undefined");
  EXPECT_THROW(ablate_components({4, 1}, fake), ParameterError);
  EXPECT_THROW(ablate_components({}, fake), ParameterError);
}

class ProbeFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    scenes::SceneConfig sc;
    for (std::uint64_t i = 0; i < 600; ++i) train_.push_back(scenes::render_scene(scenes::generate_scene(i, sc), 16, scenes::StyleTag::kPlain));
    for (std::uint64_t i = 0; i < 16; ++i) {
      validation_.push_back(scenes::render_scene(scenes::generate_scene(50000 + i, sc), 16, scenes::StyleTag::kPlain));
    }
    ProbeConfig pc;
    pc.steps = 500;
    pc.seed = 7;
    probe_ = new Probe(train_probe_segmenter(train_, validation_, pc));
  }
  static void TearDownTestSuite() { delete probe_; }

  static inline std::vector<scenes::SceneSample> train_, validation_;
  static inline Probe* probe_ = nullptr;
};

TEST_F(ProbeFixture, LearnsAndOutputsPositiveDepth) {
  EXPECT_LT(probe_->loss_curve.back(), probe_->loss_curve.front());
  EXPECT_GT(probe_->quality.miou, 0.5);
  Image noise(16, 16);
  std::mt19937_64 rng(9);
  for (auto& v : noise.rgb) v = static_cast<std::uint8_t>(rng());
  const auto d = estimate_depth_probe(*probe_, noise);
  ASSERT_EQ(d.width, 16);
  for (float v : d.values) EXPECT_GT(v, 0.0f);
  EXPECT_EQ(predict_semantics(*probe_, noise), predict_semantics(*probe_, noise));
  EXPECT_THROW(predict_semantics(*probe_, Image(10, 10)), ShapeError);
}

TEST_F(ProbeFixture, BackgroundOnlySceneIsAllBackground) {
  scenes::SceneSpec empty;
  empty.background = scenes::generate_scene(3, {}).background;
  const auto s = scenes::render_scene(empty, 16, scenes::StyleTag::kPlain);
  const auto pred = predict_semantics(*probe_, s.image);
  EXPECT_EQ(std::count(pred.values.begin(), pred.values.end(), 0), 256);
}

TEST_F(ProbeFixture, DeterministicGivenSeed) {
  ProbeConfig pc;
  pc.steps = 20;
  pc.seed = 3;
  auto a = train_probe_segmenter(std::span(train_).first(64), {}, pc);
  auto b = train_probe_segmenter(std::span(train_).first(64), {}, pc);
  EXPECT_EQ(a.loss_curve, b.loss_curve);
  EXPECT_EQ(estimate_depth_probe(a, validation_[0].image), estimate_depth_probe(b, validation_[0].image));
}

TEST_F(ProbeFixture, QualityGateAndReport) {
  Probe weak = *probe_;
  weak.config.min_miou = 1.01;
  EXPECT_THROW(require_probe_quality(weak), ProbeQualityError);

  std::vector<EvalGroup> groups;
  for (int i = 0; i < 3; ++i) groups.push_back({&validation_[static_cast<std::size_t>(i)], {validation_[static_cast<std::size_t>(i)].image, validation_[static_cast<std::size_t>(i) + 3].image}});
  std::vector<Image> pool;
  for (const auto& v : validation_) pool.push_back(v.image);
  const auto report = evaluate_generated(*probe_, groups, SiMode::kProbeVsGroundTruth, mean_rgb, pool);
  EXPECT_EQ(report.n_samples, 6);
  ASSERT_TRUE(report.diversity);
  ASSERT_TRUE(report.frechet);
  EXPECT_GE(*report.frechet, 0.0);
  EXPECT_GE(report.miou, 0.0);
  EXPECT_LE(report.miou, 1.0);
  const auto js = to_json(report);
  EXPECT_EQ(js["si_depth_mode"], "probe-vs-gt");
  EXPECT_EQ(js["per_class_iou"].size(), 4u);
  const auto row = report_csv_row(report), header = report_csv_header();
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), std::count(header.begin(), header.end(), ','));
  const auto pvp = evaluate_generated(*probe_, groups, SiMode::kProbeVsProbe, mean_rgb, {});
  EXPECT_FALSE(pvp.frechet);
  EXPECT_THROW(evaluate_generated(*probe_, {}, SiMode::kProbeVsProbe, mean_rgb, pool), ParameterError);
}

}  // namespace
}  // namespace nls::eval
