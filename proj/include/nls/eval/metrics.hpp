#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nls/core/error.hpp"
#include "nls/core/image.hpp"

namespace nls::eval {

/// Scale-invariant log depth error: the population variance of
/// d = log pred - log ref.
template <typename A, typename B>
double si_depth_error(const Plane<A>& pred, const Plane<B>& ref) {
  require_same_shape(pred, ref, "si_depth_error");
  if (pred.size() == 0) throw ParameterError("si_depth_error: empty depth maps");
  std::vector<double> d(pred.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double p = pred.values[i], r = ref.values[i];
    if (!(p > 0) || !(r > 0)) {
      const auto y = i / static_cast<std::size_t>(pred.width), x = i % static_cast<std::size_t>(pred.width);
      throw DomainError("si_depth_error: non-positive depth at pixel (" + std::to_string(y) + ", " + std::to_string(x) +
                        "): pred " + std::to_string(p) + ", ref " + std::to_string(r));
    }
    d[i] = std::log(p) - std::log(r);
  }
  double mean = 0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(d.size());
  double var = 0;
  for (double v : d) var += (v - mean) * (v - mean);
  return var / static_cast<double>(d.size());
}

struct IouResult {
  double miou = 0;
  std::vector<std::optional<double>> per_class;  // empty where the class is absent from both maps
};

inline IouResult mean_iou(const ClassMap& pred, const ClassMap& gt, int n_classes) {
  require_same_shape(pred, gt, "mean_iou");
  if (n_classes <= 0) throw ParameterError("mean_iou: n_classes must be positive");
  std::vector<std::size_t> inter(static_cast<std::size_t>(n_classes)), uni(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int p = pred.values[i], t = gt.values[i];
    if (p >= n_classes || t >= n_classes) {
      throw ParameterError("mean_iou: class index " + std::to_string(std::max(p, t)) + " >= n_classes " +
                           std::to_string(n_classes));
    }
    ++uni[static_cast<std::size_t>(p)];
    if (p == t) {
      ++inter[static_cast<std::size_t>(p)];
    } else {
      ++uni[static_cast<std::size_t>(t)];
    }
  }
  IouResult out;
  out.per_class.resize(static_cast<std::size_t>(n_classes));
  // The mean is summed as a reduced fraction so that it is correctly rounded
  // (7/12, not (1/2 + 2/3)/2); very large denominators fall back to doubles.
  using Wide = unsigned __int128;
  constexpr Wide kExactLimit = Wide(1) << 53;
  auto gcd = [](Wide a, Wide b) {
    while (b) a = std::exchange(b, a % b);
    return a;
  };
  Wide num = 0, den = 1;
  bool exact = true;
  double approx = 0;
  int present = 0;
  for (std::size_t c = 0; c < uni.size(); ++c) {
    if (uni[c] == 0) continue;
    out.per_class[c] = static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    approx += *out.per_class[c];
    ++present;
    if (!exact) continue;
    num = num * uni[c] + Wide(inter[c]) * den;
    den *= uni[c];
    const Wide g = gcd(num, den);
    num /= g;
    den /= g;
    exact = den < kExactLimit;
  }
  if (present == 0) return out;
  den *= static_cast<unsigned>(present);
  const Wide g = gcd(num, den);
  if (exact && den / g < kExactLimit) {
    out.miou = static_cast<double>(num / g) / static_cast<double>(den / g);
  } else {
    out.miou = approx / present;
  }
  return out;
}

namespace detail {

inline void fit_gaussian(const Eigen::MatrixXd& x, Eigen::VectorXd& mean, Eigen::MatrixXd& cov) {
  mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
  cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const Eigen::VectorXd roots = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// Fréchet distance between Gaussian fits (unbiased covariance) of two
/// feature sets, one sample per row. Tr((S1 S2)^1/2) is evaluated as the
/// trace of the PSD root of S1^1/2 S2 S1^1/2.
inline double frechet_feature_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) throw ShapeError("frechet_feature_distance: feature widths differ");
  const auto dim = a.cols();
  if (a.rows() < dim + 1 || b.rows() < dim + 1) {
    throw ParameterError("frechet_feature_distance: need at least " + std::to_string(dim + 1) + " rows per set, got " +
                         std::to_string(a.rows()) + " and " + std::to_string(b.rows()));
  }
  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  detail::fit_gaussian(a, mu_a, cov_a);
  detail::fit_gaussian(b, mu_b, cov_b);
  const Eigen::MatrixXd root_a = detail::psd_sqrt(cov_a);
  const Eigen::MatrixXd inner = root_a * cov_b * root_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2 * cross;
  return std::max(d, 0.0);
}

using FeatureFn = std::function<Eigen::VectorXd(const Image&)>;

/// Mean over unordered pairs of the RMS feature difference
/// ||f_i - f_j|| / sqrt(dim).
inline double pairwise_diversity(std::span<const Image> samples, const FeatureFn& feature_fn) {
  if (samples.size() < 2) throw ParameterError("pairwise_diversity needs at least 2 samples, got " + std::to_string(samples.size()));
  std::vector<Eigen::VectorXd> feats;
  feats.reserve(samples.size());
  for (const auto& s : samples) feats.push_back(feature_fn(s));
  const double norm = std::sqrt(static_cast<double>(feats.front().size()));
  double total = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    for (std::size_t j = i + 1; j < feats.size(); ++j) {
      total += (feats[i] - feats[j]).norm() / norm;
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

/// Average-rank Spearman correlation; empty when fewer than two points or a
/// constant series leaves it undefined.
inline std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("spearman: series lengths differ");
  if (x.size() < 2) return std::nullopt;
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j) + 1;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) mx += rx[i], my += ry[i];
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace nls::eval
