#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <vector>

#include "dalm/core.hpp"

namespace dalm {

struct NnlsResult {
  Vec x;
  double residual_norm = 0.0;
  int iterations = 0;
};

/// Lawson-Hanson active-set solver for min ||C x - d||_2 subject to x >= 0.
///
/// Ties in the entering-variable choice go to the smallest index.
inline NnlsResult nnls(const Eigen::Ref<const Mat>& C,
                       const Eigen::Ref<const Vec>& d) {
  const Index n = C.cols();
  NnlsResult out;
  out.x = Vec::Zero(n);
  if (n == 0) {
    out.residual_norm = d.norm();
    return out;
  }

  const double tol = 1e-13 * (1.0 + C.norm() * d.norm());
  std::vector<bool> passive(static_cast<std::size_t>(n), false);
  Vec& x = out.x;
  Vec w = C.transpose() * (d - C * x);

  const int max_outer = static_cast<int>(3 * n + 10);
  auto solve_passive = [&](Vec& s) {
    std::vector<Index> idx;
    for (Index j = 0; j < n; ++j)
      if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
    Mat Cp(C.rows(), static_cast<Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k)
      Cp.col(static_cast<Index>(k)) = C.col(idx[k]);
    const Vec sp = Cp.colPivHouseholderQr().solve(d);
    s.setZero(n);
    for (std::size_t k = 0; k < idx.size(); ++k) s(idx[k]) = sp(static_cast<Index>(k));
  };

  for (; out.iterations < max_outer; ++out.iterations) {
    Index enter = -1;
    double best = tol;
    for (Index j = 0; j < n; ++j) {
      if (!passive[static_cast<std::size_t>(j)] && w(j) > best) {
        best = w(j);
        enter = j;
      }
    }
    if (enter < 0) break;
    passive[static_cast<std::size_t>(enter)] = true;

    Vec s;
    for (int inner = 0; inner < max_outer; ++inner) {
      solve_passive(s);
      bool all_positive = true;
      double alpha = std::numeric_limits<double>::infinity();
      for (Index j = 0; j < n; ++j) {
        if (!passive[static_cast<std::size_t>(j)] || s(j) > 0.0) continue;
        all_positive = false;
        const double denom = x(j) - s(j);
        if (denom > 0.0) alpha = std::min(alpha, x(j) / denom);
      }
      if (all_positive) break;
      if (!std::isfinite(alpha)) alpha = 0.0;
      x += alpha * (s - x);
      for (Index j = 0; j < n; ++j) {
        if (passive[static_cast<std::size_t>(j)] && x(j) <= tol) {
          passive[static_cast<std::size_t>(j)] = false;
          x(j) = 0.0;
        }
      }
    }
    x = s;
    for (Index j = 0; j < n; ++j)
      if (!passive[static_cast<std::size_t>(j)]) x(j) = 0.0;
    w = C.transpose() * (d - C * x);
  }
  out.residual_norm = (C * x - d).norm();
  return out;
}

/// Numerical row rank: singular values above `rel_tol * sigma_max`.
inline Index numerical_rank(const Eigen::Ref<const Mat>& m, double rel_tol) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<Mat> svd(m);
  const Vec& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) <= 0.0) return 0;
  Index rank = 0;
  for (Index k = 0; k < sv.size(); ++k)
    if (sv(k) > rel_tol * sv(0)) ++rank;
  return rank;
}

/// Largest absolute eigenvalue of a symmetric matrix (its 2-norm).
inline double symmetric_norm2(const Eigen::Ref<const Mat>& m) {
  if (m.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace dalm
