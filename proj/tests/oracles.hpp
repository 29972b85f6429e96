#pragma once

// Straight-line reference implementations used only by tests. They avoid the
// library's code paths (and Eigen's solvers) on purpose.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

namespace nls::oracle {

struct Eigenpairs {
  std::vector<double> values;               // descending
  std::vector<std::vector<double>> vectors; // vectors[i] pairs with values[i]
};

/// Cyclic Jacobi rotations on a dense symmetric matrix.
inline Eigenpairs jacobi_eigen(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    }
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a[i][i] > a[j][j]; });
  Eigenpairs out;
  for (auto i : order) {
    out.values.push_back(a[i][i]);
    std::vector<double> col(n);
    for (std::size_t k = 0; k < n; ++k) col[k] = v[k][i];
    out.vectors.push_back(col);
  }
  return out;
}

/// Unbiased covariance with explicit loops.
inline std::vector<std::vector<double>> covariance(const Eigen::MatrixXd& x) {
  const auto m = x.rows(), c = x.cols();
  std::vector<double> mean(static_cast<std::size_t>(c), 0.0);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index k = 0; k < c; ++k) mean[static_cast<std::size_t>(k)] += x(i, k);
  }
  for (auto& v : mean) v /= static_cast<double>(m);
  std::vector<std::vector<double>> cov(static_cast<std::size_t>(c), std::vector<double>(static_cast<std::size_t>(c), 0.0));
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index p = 0; p < c; ++p) {
      for (Eigen::Index q = 0; q < c; ++q) {
        cov[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)] +=
            (x(i, p) - mean[static_cast<std::size_t>(p)]) * (x(i, q) - mean[static_cast<std::size_t>(q)]);
      }
    }
  }
  for (auto& row : cov) {
    for (auto& v : row) v /= static_cast<double>(m - 1);
  }
  return cov;
}

/// Largest principal angle between the row spaces of two matrices with
/// orthonormal rows, computed as asin of the residual norm (accurate near 0).
inline double max_principal_angle(const Eigen::MatrixXd& a_rows, const Eigen::MatrixXd& b_rows) {
  const Eigen::MatrixXd a = a_rows.transpose();  // C x N
  const Eigen::MatrixXd b = b_rows.transpose();
  const Eigen::MatrixXd residual = b - a * (a.transpose() * b);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(residual);
  const double s = svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
  return std::asin(std::min(1.0, s));
}

/// Fréchet distance with sqrt(S1 S2) taken from the eigenvalues of the
/// (non-symmetric) product: Tr sqrt(S1 S2) = sum sqrt(lambda_i).
inline double frechet_direct(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  auto fit = [](const Eigen::MatrixXd& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    mu = x.colwise().mean().transpose();
    cov = Eigen::MatrixXd::Zero(x.cols(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Eigen::VectorXd d = x.row(i).transpose() - mu;
      cov += d * d.transpose();
    }
    cov /= static_cast<double>(x.rows() - 1);
  };
  Eigen::VectorXd mu1, mu2;
  Eigen::MatrixXd s1, s2;
  fit(a, mu1, s1);
  fit(b, mu2, s2);
  Eigen::EigenSolver<Eigen::MatrixXd> es(s1 * s2);
  double tr_sqrt = 0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) tr_sqrt += std::sqrt(std::max(0.0, es.eigenvalues()(i).real()));
  return (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2 * tr_sqrt;
}

}  // namespace nls::oracle
