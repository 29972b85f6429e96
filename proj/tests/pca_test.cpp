#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>

#include "nls/pca/projector.hpp"
#include "oracles.hpp"

namespace nls::pca {
namespace {

Eigen::MatrixXd random_samples(std::mt19937_64& rng, int m, int c) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd x(m, c);
  // Anisotropic so the eigenvalues are well separated on average.
  for (int k = 0; k < c; ++k) {
    const double scale = 1.0 + 3.0 * k / c;
    for (int i = 0; i < m; ++i) x(i, k) = static_cast<float>(normal(rng) * scale);
  }
  const Eigen::MatrixXd mix = Eigen::MatrixXd::NullaryExpr(c, c, [&] { return normal(rng); });
  return (x * mix).cast<float>().cast<double>();
}

DenseFeatureMap random_map(std::mt19937_64& rng, int h, int w, int c) {
  std::normal_distribution<float> normal;
  DenseFeatureMap map(h, w, c, 4, "toy");
  for (auto& v : map.values) v = normal(rng);
  return map;
}

TEST(SampleFeatureVectors, DefaultCount) { EXPECT_EQ(kDefaultSampleCount, 40000); }

TEST(SampleFeatureVectors, ExhaustiveCaseReturnsEverythingShuffled) {
  std::mt19937_64 rng(1);
  const std::vector<DenseFeatureMap> maps{random_map(rng, 5, 10, 3), random_map(rng, 5, 10, 3)};
  const auto sample = sample_feature_vectors(maps, 100, 9);
  ASSERT_EQ(sample.vectors.rows(), 100);
  EXPECT_FALSE(sample.warning.has_value());
  std::multiset<float> expected, got;
  for (const auto& m : maps) {
    for (int i = 0; i < m.cell_count(); ++i) expected.insert(m.values[static_cast<std::size_t>(i) * 3]);
  }
  bool in_order = true;
  for (int i = 0; i < 100; ++i) {
    got.insert(static_cast<float>(sample.vectors(i, 0)));
    const auto& src = maps[static_cast<std::size_t>(i / 50)];
    in_order &= static_cast<float>(sample.vectors(i, 0)) == src.values[static_cast<std::size_t>(i % 50) * 3];
  }
  EXPECT_EQ(got, expected);
  EXPECT_FALSE(in_order);
}

TEST(SampleFeatureVectors, ShortDatasetWarnsAndDeterministic) {
  std::mt19937_64 rng(2);
  const std::vector<DenseFeatureMap> maps{random_map(rng, 4, 4, 6)};
  const auto a = sample_feature_vectors(maps, 40000, 3);
  EXPECT_EQ(a.vectors.rows(), 16);
  EXPECT_TRUE(a.warning.has_value());
  const auto b = sample_feature_vectors(maps, 40000, 3);
  EXPECT_EQ(a.vectors, b.vectors);
  EXPECT_EQ(sample_feature_vectors(maps, 7, 3).vectors, sample_feature_vectors(maps, 7, 3).vectors);
}

TEST(SampleFeatureVectors, RoughlyUniformAcrossMaps) {
  std::mt19937_64 rng(3);
  DenseFeatureMap a(20, 20, 1, 1), b(20, 20, 1, 1);
  std::fill(a.values.begin(), a.values.end(), 0.0f);
  std::fill(b.values.begin(), b.values.end(), 1.0f);
  const std::vector<DenseFeatureMap> maps{a, b};
  const auto sample = sample_feature_vectors(maps, 400, 11);
  const double from_b = sample.vectors.col(0).sum();
  EXPECT_NEAR(from_b, 200, 40);
}

TEST(SampleFeatureVectors, ChannelMismatch) {
  std::mt19937_64 rng(4);
  const std::vector<DenseFeatureMap> maps{random_map(rng, 2, 2, 3), random_map(rng, 2, 2, 4)};
  EXPECT_THROW(sample_feature_vectors(maps, 4, 1), ConsistencyError);
}

TEST(FitPca, LineDirection) {
  Eigen::MatrixXd x(50, 2);
  for (int i = 0; i < 50; ++i) x(i, 0) = x(i, 1) = (i - 20) * 0.37;
  const auto p = fit_pca(x, 1, 0);
  EXPECT_NEAR(p.components[0], 1 / std::sqrt(2.0), 1e-6);
  EXPECT_NEAR(p.components[1], 1 / std::sqrt(2.0), 1e-6);

  // Oracle on the same samples.
  const auto eig = oracle::jacobi_eigen(oracle::covariance(x));
  EXPECT_NEAR(std::abs(eig.vectors[0][0]), p.components[0], 1e-6);
  EXPECT_NEAR(eig.values[0], p.explained_variance[0], 1e-5 * eig.values[0]);
}

TEST(FitPca, ConstantSamples) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Constant(10, 4, 0.25);
  const auto p = fit_pca(x, 3, 5);
  for (float v : p.explained_variance) EXPECT_EQ(v, 0.0f);
  EXPECT_LT(orthonormality_deviation(p), 1e-6);
  DenseFeatureMap map(1, 1, 4, 1);
  std::fill(map.values.begin(), map.values.end(), 0.25f);
  for (double a : project(map, p).values) EXPECT_EQ(a, 0.0);
}

TEST(FitPca, FullRankIsLossless) {
  std::mt19937_64 rng(5);
  const auto x = random_samples(rng, 40, 6);
  const auto p = fit_pca(x, 6, 0);
  DenseFeatureMap map(1, 40, 6, 1);
  for (int i = 0; i < 40; ++i) {
    for (int c = 0; c < 6; ++c) map.values[static_cast<std::size_t>(i * 6 + c)] = static_cast<float>(x(i, c));
  }
  const auto rec = reconstruct(project(map, p), p);
  for (int i = 0; i < 40; ++i) {
    double err = 0, norm = 0;
    for (int c = 0; c < 6; ++c) {
      const auto k = static_cast<std::size_t>(i * 6 + c);
      err += std::pow(rec.values[k] - map.values[k], 2);
      norm += std::pow(map.values[k], 2);
    }
    EXPECT_LT(std::sqrt(err / norm), 1e-5);
  }
}

TEST(FitPca, ParameterErrors) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 3);
  EXPECT_THROW(fit_pca(x, 4, 0), ParameterError);
  EXPECT_THROW(fit_pca(x, 0, 0), ParameterError);
  EXPECT_THROW(fit_pca(x.topRows(1), 1, 0), ParameterError);
  Eigen::MatrixXd wide = Eigen::MatrixXd::Random(3, 8);
  EXPECT_THROW(fit_pca(wide, 4, 0), ParameterError);
}

TEST(FitPca, OracleEquivalenceProperty) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = std::uniform_int_distribution<int>(3, 50)(rng);
    const int c = std::uniform_int_distribution<int>(2, 30)(rng);
    const int n = std::uniform_int_distribution<int>(1, std::min(m - 1, c))(rng);
    const auto x = random_samples(rng, m, c);
    const auto p = fit_pca(x, n, trial);
    EXPECT_LT(orthonormality_deviation(p), 1e-6);
    const auto eig = oracle::jacobi_eigen(oracle::covariance(x));
    Eigen::MatrixXd ref(n, c);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < c; ++k) ref(i, k) = eig.vectors[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    }
    EXPECT_LT(oracle::max_principal_angle(p.component_matrix(), ref), 1e-5) << "trial " << trial;
  }
}

TEST(FitPca, SignConventionAndDeterminism) {
  std::mt19937_64 rng(7);
  const auto x = random_samples(rng, 30, 8);
  const auto a = fit_pca(x, 5, 3);
  EXPECT_EQ(a, fit_pca(x, 5, 3));
  for (int i = 0; i < 5; ++i) {
    int arg = 0;
    for (int k = 1; k < 8; ++k) {
      if (std::abs(a.components[static_cast<std::size_t>(i * 8 + k)]) > std::abs(a.components[static_cast<std::size_t>(i * 8 + arg)])) arg = k;
    }
    EXPECT_GT(a.components[static_cast<std::size_t>(i * 8 + arg)], 0.0f);
  }
  // Negating the data leaves the components unchanged.
  EXPECT_EQ(fit_pca(-x, 5, 3).components, a.components);
}

TEST(FitPca, RankDeficientCompletion) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(20, 5);
  for (int i = 0; i < 20; ++i) {
    x(i, 0) = normal(rng);
    x(i, 3) = 0.5 * normal(rng);
  }
  const auto p = fit_pca(x, 4, 1);
  EXPECT_LT(orthonormality_deviation(p), 1e-6);
  EXPECT_GT(p.explained_variance[1], 0.0f);
  EXPECT_EQ(p.explained_variance[2], 0.0f);
  EXPECT_EQ(p.explained_variance[3], 0.0f);
  EXPECT_EQ(p, fit_pca(x, 4, 1));
}

TEST(Project, CentersAndUsesOrthonormality) {
  std::mt19937_64 rng(9);
  const auto x = random_samples(rng, 40, 6);
  const auto p = fit_pca(x, 3, 0);
  DenseFeatureMap map(1, 2, 6, 1);
  for (int c = 0; c < 6; ++c) {
    map.values[static_cast<std::size_t>(c)] = p.mean[static_cast<std::size_t>(c)];
    map.values[static_cast<std::size_t>(6 + c)] = p.mean[static_cast<std::size_t>(c)] + 2 * p.components[static_cast<std::size_t>(c)];
  }
  const auto coeffs = project(map, p);
  for (double a : coeffs.cell(0, 0)) EXPECT_EQ(a, 0.0);
  EXPECT_NEAR(coeffs.cell(0, 1)[0], 2.0, 1e-6);
  EXPECT_NEAR(coeffs.cell(0, 1)[1], 0.0, 1e-6);
  EXPECT_NEAR(coeffs.cell(0, 1)[2], 0.0, 1e-6);
}

TEST(Project, MatchesNaiveDotProducts) {
  std::mt19937_64 rng(10);
  const auto p = fit_pca(random_samples(rng, 60, 12), 5, 0);
  const auto map = random_map(rng, 4, 3, 12);
  const auto coeffs = project(map, p);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 3; ++x) {
      for (int k = 0; k < 5; ++k) {
        double dot = 0;
        for (int c = 0; c < 12; ++c) {
          dot += static_cast<double>(p.components[static_cast<std::size_t>(k * 12 + c)]) *
                 (static_cast<double>(map.cell(y, x)[static_cast<std::size_t>(c)]) - p.mean[static_cast<std::size_t>(c)]);
        }
        EXPECT_NEAR(coeffs.cell(y, x)[static_cast<std::size_t>(k)], dot, 1e-6);
      }
    }
  }
  EXPECT_THROW(project(random_map(rng, 2, 2, 11), p), ShapeError);
}

TEST(Project, EnergyBound) {
  std::mt19937_64 rng(11);
  const auto x = random_samples(rng, 50, 10);
  for (int n = 1; n <= 10; ++n) {
    const auto p = fit_pca(x, n, 0);
    DenseFeatureMap map(1, 50, 10, 1);
    for (int i = 0; i < 50; ++i) {
      for (int c = 0; c < 10; ++c) map.values[static_cast<std::size_t>(i * 10 + c)] = static_cast<float>(x(i, c));
    }
    const auto coeffs = project(map, p);
    for (int i = 0; i < 50; ++i) {
      double energy = 0, centered = 0;
      for (double a : coeffs.cell(0, i)) energy += a * a;
      for (int c = 0; c < 10; ++c) centered += std::pow(map.values[static_cast<std::size_t>(i * 10 + c)] - p.mean[static_cast<std::size_t>(c)], 2);
      EXPECT_LE(energy, centered * (1 + 1e-6));
    }
  }
}

TEST(Reconstruct, ZeroCoefficientsGiveMean) {
  std::mt19937_64 rng(12);
  const auto p = fit_pca(random_samples(rng, 20, 4), 2, 0);
  CoefficientMap zero{2, 2, 2, 8, std::vector<double>(8, 0.0), p.id()};
  const auto rec = reconstruct(zero, p);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) {
      for (int c = 0; c < 4; ++c) EXPECT_EQ(rec.cell(y, x)[static_cast<std::size_t>(c)], p.mean[static_cast<std::size_t>(c)]);
    }
  }
  zero.n_components = 3;
  EXPECT_THROW(reconstruct(zero, p), ShapeError);
}

TEST(Reconstruct, ErrorIsMonotoneInComponents) {
  std::mt19937_64 rng(13);
  std::vector<DenseFeatureMap> maps{random_map(rng, 6, 6, 9), random_map(rng, 6, 6, 9)};
  for (auto& m : maps) {
    for (int i = 0; i < m.cell_count(); ++i) m.values[static_cast<std::size_t>(i * 9)] *= 4;
  }
  const auto sample = sample_feature_vectors(maps, 72, 0);
  double previous = std::numeric_limits<double>::infinity();
  for (int n = 1; n <= 9; ++n) {
    const double err = mean_reconstruction_error(maps, fit_pca(sample.vectors, n, 0));
    EXPECT_LE(err, previous + 1e-9) << "N=" << n;
    previous = err;
  }
  EXPECT_LT(previous, 1e-9);
}

TEST(ProjectorFile, RoundTripIsBitExact) {
  std::mt19937_64 rng(14);
  const auto p = fit_pca(random_samples(rng, 30, 7), 4, 2, "toy/dino:key");
  const auto path = std::filesystem::temp_directory_path() / "nls_pca_roundtrip.nlpc";
  save_projector(p, path);
  const auto q = load_projector(path);
  EXPECT_EQ(p, q);
  EXPECT_EQ(std::memcmp(p.components.data(), q.components.data(), p.components.size() * 4), 0);
}

TEST(ProjectorFile, ValidationOnLoad) {
  std::mt19937_64 rng(15);
  const auto p = fit_pca(random_samples(rng, 30, 5), 3, 2);

  auto skewed = p;
  skewed.components[0] += 1e-3f;
  EXPECT_THROW(decode_projector(encode_projector(skewed)), ValidationError);

  auto slightly = p;
  slightly.components[0] += 1e-6f;
  EXPECT_NO_THROW(decode_projector(encode_projector(slightly)));

  auto increasing = p;
  increasing.explained_variance[2] = increasing.explained_variance[0] * 2;
  EXPECT_THROW(decode_projector(encode_projector(increasing)), ValidationError);

  auto bytes = encode_projector(p);
  bytes[1] = 'X';
  EXPECT_THROW(decode_projector(bytes), FormatError);
  bytes = encode_projector(p);
  bytes[4] = 2;
  EXPECT_THROW(decode_projector(bytes), FormatError);
  EXPECT_THROW(decode_projector(encode_projector(p).substr(0, 30)), FormatError);
}

}  // namespace
}  // namespace nls::pca
