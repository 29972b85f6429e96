#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nls/core/binary_io.hpp"
#include "nls/core/error.hpp"
#include "nls/core/random.hpp"
#include "nls/features/dense_map.hpp"

namespace nls::pca {

using features::DenseFeatureMap;

inline constexpr int kDefaultSampleCount = 40000;

/// Mean plus orthonormal component rows, stored at file precision (float32) so
/// that save/load is bit exact.
struct PcaProjector {
  std::vector<float> mean;                // C
  std::vector<float> components;          // N x C, row-major
  std::vector<float> explained_variance;  // N, non-increasing
  int n_components = 0;
  int sample_count = 0;
  std::string source_id;

  int channels() const { return static_cast<int>(mean.size()); }

  Eigen::MatrixXd component_matrix() const {
    Eigen::MatrixXd v(n_components, channels());
    for (int i = 0; i < n_components; ++i) {
      for (int c = 0; c < channels(); ++c) v(i, c) = components[static_cast<std::size_t>(i) * channels() + c];
    }
    return v;
  }

  Eigen::VectorXd mean_vector() const {
    Eigen::VectorXd m(channels());
    for (int c = 0; c < channels(); ++c) m(c) = mean[static_cast<std::size_t>(c)];
    return m;
  }

  /// Identifier carried by coefficient maps and layouts built with this projector.
  std::string id() const { return source_id + "#pca" + std::to_string(n_components); }

  friend bool operator==(const PcaProjector&, const PcaProjector&) = default;
};

/// Per-cell PCA coefficients, row-major (h, w, n).
struct CoefficientMap {
  int height_patches = 0;
  int width_patches = 0;
  int n_components = 0;
  int stride_px = 1;
  std::vector<double> values;
  std::string projector_id;

  std::span<double> cell(int y, int x) {
    return {values.data() + (static_cast<std::size_t>(y) * width_patches + x) * n_components,
            static_cast<std::size_t>(n_components)};
  }
  std::span<const double> cell(int y, int x) const {
    return {values.data() + (static_cast<std::size_t>(y) * width_patches + x) * n_components,
            static_cast<std::size_t>(n_components)};
  }
};

struct FeatureSample {
  Eigen::MatrixXd vectors;  // count x C
  std::size_t available = 0;
  std::optional<std::string> warning;
};

/// Uniform sampling without replacement over every (map, cell) position. When
/// fewer than `count` vectors exist, all of them are returned (shuffled) and a
/// warning is attached.
inline FeatureSample sample_feature_vectors(std::span<const DenseFeatureMap> dataset, int count, std::uint64_t seed) {
  if (count <= 0) throw ParameterError("sample count must be positive");
  std::size_t total = 0;
  const int channels = dataset.empty() ? 0 : dataset.front().channels;
  std::vector<std::size_t> offsets;
  for (const auto& map : dataset) {
    if (map.channels != channels) {
      throw ConsistencyError("feature maps disagree on channel count: " + std::to_string(channels) + " vs " +
                             std::to_string(map.channels));
    }
    offsets.push_back(total);
    total += static_cast<std::size_t>(map.cell_count());
  }
  if (total == 0) throw ParameterError("no feature vectors available to sample");

  FeatureSample out;
  out.available = total;
  const std::size_t take = std::min<std::size_t>(total, static_cast<std::size_t>(count));
  if (take < static_cast<std::size_t>(count)) {
    out.warning = "only " + std::to_string(total) + " feature vectors available; using all of them instead of " +
                  std::to_string(count);
  }

  // Partial Fisher-Yates over the flat position index.
  std::vector<std::size_t> index(total);
  std::iota(index.begin(), index.end(), std::size_t{0});
  Rng rng(derive_seed({seed, 0x5a3b1eULL}));
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, total - 1);
    std::swap(index[i], index[pick(rng)]);
  }

  out.vectors.resize(static_cast<Eigen::Index>(take), channels);
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t flat = index[i];
    const auto map_it = std::upper_bound(offsets.begin(), offsets.end(), flat) - 1;
    const auto& map = dataset[static_cast<std::size_t>(map_it - offsets.begin())];
    const std::size_t cell = flat - *map_it;
    const float* src = map.values.data() + cell * static_cast<std::size_t>(channels);
    for (int c = 0; c < channels; ++c) out.vectors(static_cast<Eigen::Index>(i), c) = src[c];
  }
  return out;
}

/// Relative eigenvalue floor below which a direction counts as outside the
/// numerical rank of the sample covariance.
inline constexpr double kRankTolerance = 1e-10;

/// Exact PCA via the C x C sample covariance (divided by M - 1). Components
/// beyond the numerical rank are completed by seeded Gram-Schmidt; each
/// component's largest-magnitude entry (lowest index on ties) is positive.
inline PcaProjector fit_pca(const Eigen::MatrixXd& samples, int n_components, std::uint64_t seed,
                            std::string source_id = {}) {
  const auto m = samples.rows();
  const auto c = samples.cols();
  if (m < 2) throw ParameterError("fit_pca needs at least 2 samples, got " + std::to_string(m));
  if (n_components < 1 || n_components > std::min(m, c)) {
    throw ParameterError("n_components " + std::to_string(n_components) + " must lie in [1, min(M=" +
                         std::to_string(m) + ", C=" + std::to_string(c) + ")]");
  }
  if (!samples.allFinite()) throw ValidationError("samples contain non-finite values");

  const Eigen::RowVectorXd mean = samples.colwise().mean();
  const Eigen::MatrixXd centered = samples.rowwise() - mean;
  const Eigen::MatrixXd covariance = (centered.transpose() * centered) / static_cast<double>(m - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(covariance);
  if (solver.info() != Eigen::Success) throw ValidationError("covariance eigendecomposition failed");

  // Eigen returns ascending eigenvalues.
  const Eigen::VectorXd eigenvalues = solver.eigenvalues().reverse();
  const Eigen::MatrixXd eigenvectors = solver.eigenvectors().rowwise().reverse();
  const double largest = eigenvalues.size() ? eigenvalues(0) : 0.0;
  int rank = 0;
  while (rank < c && largest > 0 && eigenvalues(rank) >= kRankTolerance * largest) ++rank;

  Eigen::MatrixXd basis(n_components, c);
  Eigen::VectorXd variance = Eigen::VectorXd::Zero(n_components);
  Rng rng(derive_seed({seed, 0x9ca0ULL}));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < n_components; ++i) {
    Eigen::RowVectorXd v;
    if (i < rank) {
      v = eigenvectors.col(i).transpose();
      variance(i) = std::max(eigenvalues(i), 0.0);
    } else {
      do {
        v.resize(c);
        for (Eigen::Index k = 0; k < c; ++k) v(k) = normal(rng);
        for (int pass = 0; pass < 2; ++pass) {
          for (int j = 0; j < i; ++j) v -= v.dot(basis.row(j)) * basis.row(j);
        }
      } while (v.norm() < 1e-6);
    }
    v.normalize();
    Eigen::Index arg = 0;
    for (Eigen::Index k = 1; k < c; ++k) {
      if (std::abs(v(k)) > std::abs(v(arg))) arg = k;
    }
    if (v(arg) < 0) v = -v;
    basis.row(i) = v;
  }

  PcaProjector p;
  p.n_components = n_components;
  p.sample_count = static_cast<int>(m);
  p.source_id = std::move(source_id);
  p.mean.resize(static_cast<std::size_t>(c));
  for (Eigen::Index k = 0; k < c; ++k) p.mean[static_cast<std::size_t>(k)] = static_cast<float>(mean(k));
  p.components.resize(static_cast<std::size_t>(n_components) * c);
  for (int i = 0; i < n_components; ++i) {
    for (Eigen::Index k = 0; k < c; ++k) p.components[static_cast<std::size_t>(i * c + k)] = static_cast<float>(basis(i, k));
  }
  p.explained_variance.resize(static_cast<std::size_t>(n_components));
  for (int i = 0; i < n_components; ++i) p.explained_variance[static_cast<std::size_t>(i)] = static_cast<float>(variance(i));
  return p;
}

/// a = V (f - mean) per cell.
inline CoefficientMap project(const DenseFeatureMap& map, const PcaProjector& projector) {
  if (map.channels != projector.channels()) {
    throw ShapeError("feature map has " + std::to_string(map.channels) + " channels, projector expects " +
                     std::to_string(projector.channels()));
  }
  const Eigen::MatrixXd v = projector.component_matrix();
  const Eigen::VectorXd mu = projector.mean_vector();
  CoefficientMap out;
  out.height_patches = map.height_patches;
  out.width_patches = map.width_patches;
  out.n_components = projector.n_components;
  out.stride_px = map.stride_px;
  out.projector_id = projector.id();
  out.values.resize(static_cast<std::size_t>(map.cell_count()) * projector.n_components);
  Eigen::MatrixXd centered(map.channels, map.cell_count());
  for (int i = 0; i < map.cell_count(); ++i) {
    for (int c = 0; c < map.channels; ++c) {
      centered(c, i) = static_cast<double>(map.values[static_cast<std::size_t>(i) * map.channels + c]) - mu(c);
    }
  }
  const Eigen::MatrixXd coeffs = v * centered;  // N x cells
  for (int i = 0; i < map.cell_count(); ++i) {
    for (int k = 0; k < out.n_components; ++k) {
      out.values[static_cast<std::size_t>(i) * out.n_components + k] = coeffs(k, i);
    }
  }
  return out;
}

/// f_hat = V^T a + mean per cell.
inline DenseFeatureMap reconstruct(const CoefficientMap& coeffs, const PcaProjector& projector) {
  if (coeffs.n_components != projector.n_components) {
    throw ShapeError("coefficient map has " + std::to_string(coeffs.n_components) + " components, projector has " +
                     std::to_string(projector.n_components));
  }
  const Eigen::MatrixXd v = projector.component_matrix();
  const Eigen::VectorXd mu = projector.mean_vector();
  const int cells = coeffs.height_patches * coeffs.width_patches;
  Eigen::MatrixXd a(coeffs.n_components, cells);
  for (int i = 0; i < cells; ++i) {
    for (int k = 0; k < coeffs.n_components; ++k) {
      a(k, i) = coeffs.values[static_cast<std::size_t>(i) * coeffs.n_components + k];
    }
  }
  const Eigen::MatrixXd f = (v.transpose() * a).colwise() + mu;
  DenseFeatureMap out(coeffs.height_patches, coeffs.width_patches, projector.channels(), coeffs.stride_px,
                      projector.source_id);
  for (int i = 0; i < cells; ++i) {
    for (int c = 0; c < projector.channels(); ++c) {
      out.values[static_cast<std::size_t>(i) * projector.channels() + c] = static_cast<float>(f(c, i));
    }
  }
  return out;
}

/// Largest |V V^T - I| entry.
inline double orthonormality_deviation(const PcaProjector& projector) {
  const Eigen::MatrixXd v = projector.component_matrix();
  const Eigen::MatrixXd gram = v * v.transpose();
  return (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
}

inline constexpr char kProjectorMagic[] = "NLPC";
inline constexpr std::uint16_t kProjectorVersion = 1;
inline constexpr double kLoadOrthonormalityTolerance = 1e-4;

inline std::string encode_projector(const PcaProjector& p) {
  io::ByteWriter w;
  w.magic(kProjectorMagic);
  w.u16(kProjectorVersion);
  w.u32(static_cast<std::uint32_t>(p.channels()));
  w.u32(static_cast<std::uint32_t>(p.n_components));
  w.u32(static_cast<std::uint32_t>(p.sample_count));
  w.str(p.source_id);
  w.f32s(p.mean);
  w.f32s(p.explained_variance);
  w.f32s(p.components);
  return w.bytes();
}

inline void validate_projector(const PcaProjector& p, const std::string& context) {
  for (const auto* values : {&p.mean, &p.explained_variance, &p.components}) {
    for (float v : *values) {
      if (!std::isfinite(v)) throw ValidationError(context + ": non-finite projector value");
    }
  }
  for (std::size_t i = 0; i < p.explained_variance.size(); ++i) {
    if (p.explained_variance[i] < 0) throw ValidationError(context + ": negative explained variance");
    if (i > 0 && p.explained_variance[i] > p.explained_variance[i - 1]) {
      throw ValidationError(context + ": explained variance increases at component " + std::to_string(i));
    }
  }
  const double dev = orthonormality_deviation(p);
  if (dev > kLoadOrthonormalityTolerance) {
    throw ValidationError(context + ": components are not orthonormal (max deviation " + std::to_string(dev) + ")");
  }
}

inline PcaProjector decode_projector(std::string_view bytes, const std::string& context = "projector file") {
  io::ByteReader r(bytes, context);
  r.expect_magic(kProjectorMagic);
  const auto version = r.u16("version");
  if (version != kProjectorVersion) throw FormatError(context + ": unsupported version " + std::to_string(version));
  const auto c = r.u32("C");
  const auto n = r.u32("N");
  const auto samples = r.u32("sample_count");
  if (c == 0 || n == 0 || n > c) throw FormatError(context + ": invalid dimensions C=" + std::to_string(c) +
                                                    " N=" + std::to_string(n));
  PcaProjector p;
  p.n_components = static_cast<int>(n);
  p.sample_count = static_cast<int>(samples);
  p.source_id = r.str("source_id");
  if (r.remaining() != (std::uint64_t{c} + n + std::uint64_t{n} * c) * 4) {
    throw FormatError(context + ": payload size does not match header");
  }
  p.mean.resize(c);
  for (auto& v : p.mean) v = r.f32("mean");
  p.explained_variance.resize(n);
  for (auto& v : p.explained_variance) v = r.f32("explained_variance");
  p.components.resize(std::size_t{n} * c);
  for (auto& v : p.components) v = r.f32("components");
  r.expect_end();
  validate_projector(p, context);
  return p;
}

inline void save_projector(const PcaProjector& projector, const std::filesystem::path& path) {
  io::write_file(path, encode_projector(projector));
}

inline PcaProjector load_projector(const std::filesystem::path& path) {
  return decode_projector(io::read_file(path), path.string());
}

/// Mean over cells of ||f - f_hat||^2, evaluated in double precision.
inline double mean_reconstruction_error(std::span<const DenseFeatureMap> maps, const PcaProjector& projector) {
  const Eigen::MatrixXd v = projector.component_matrix();
  const Eigen::VectorXd mu = projector.mean_vector();
  double total = 0;
  std::size_t cells = 0;
  for (const auto& map : maps) {
    if (map.channels != projector.channels()) throw ShapeError("channel mismatch in reconstruction error");
    for (int i = 0; i < map.cell_count(); ++i) {
      Eigen::VectorXd f(map.channels);
      for (int c = 0; c < map.channels; ++c) f(c) = map.values[static_cast<std::size_t>(i) * map.channels + c];
      const Eigen::VectorXd centered = f - mu;
      total += (centered - v.transpose() * (v * centered)).squaredNorm();
      ++cells;
    }
  }
  return cells ? total / static_cast<double>(cells) : 0.0;
}

}  // namespace nls::pca
