#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dalm/core.hpp"
#include "dalm/linalg.hpp"
#include "dalm/model.hpp"

namespace dalm {

/// Proximal block subproblem
///
///   min_{x in Z_i}  g^T (x - c) + 1/2 (x - c)^T M (x - c)
///
/// with M = B + alpha I symmetric positive definite and c = z_i^l.
/// The polytope is held by reference and must outlive the ProxQp.
class ProxQp {
 public:
  ProxQp(Vec g, Mat M, Vec center, const Polytope& set)
      : g_(std::move(g)), M_(std::move(M)), center_(std::move(center)), set_(set) {
    const Index n = g_.size();
    if (M_.rows() != n || M_.cols() != n || center_.size() != n || set.dim() != n)
      throw StructuralError("ProxQp: inconsistent dimensions");
    if (!g_.allFinite() || !M_.allFinite() || !center_.allFinite())
      throw NumericError("ProxQp: non-finite data", std::nullopt);
    const double scale = std::max(1.0, M_.cwiseAbs().maxCoeff());
    if ((M_ - M_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
      throw PreconditionError("ProxQp: M is not symmetric");
    if (n <= 16) {
      Eigen::SelfAdjointEigenSolver<Mat> es(M_, Eigen::EigenvaluesOnly);
      if (!(es.eigenvalues().minCoeff() > 0.0))
        throw PreconditionError("ProxQp: M is not positive definite");
    } else if (M_.llt().info() != Eigen::Success) {
      throw PreconditionError("ProxQp: M is not positive definite");
    }
    diagonal_ = M_.isDiagonal(0.0);
  }

  /// Diagonal shortcut for M = m I.
  ProxQp(Vec g, double m, Vec center, const Polytope& set)
      : ProxQp(g, Mat::Identity(g.size(), g.size()) * m, std::move(center), set) {}

  const Vec& g() const noexcept { return g_; }
  const Mat& M() const noexcept { return M_; }
  const Vec& center() const noexcept { return center_; }
  const Polytope& set() const noexcept { return set_.get(); }
  bool diagonal() const noexcept { return diagonal_; }

  double objective(const Eigen::Ref<const Vec>& x) const {
    const Vec d = x - center_;
    return g_.dot(d) + 0.5 * d.dot(M_ * d);
  }
  Vec gradient(const Eigen::Ref<const Vec>& x) const { return g_ + M_ * (x - center_); }

 private:
  Vec g_;
  Mat M_;
  Vec center_;
  std::reference_wrapper<const Polytope> set_;
  bool diagonal_ = false;
};

struct QpSolution {
  Vec minimizer;
  double kkt_residual = 0.0;
  std::vector<Index> active_set;  // polytope rows active at the minimizer
  int iterations = 0;
};

namespace detail {

// || x - P(x - grad) ||_inf for a box.
inline double box_projected_residual(const Polytope& box, const Vec& x, const Vec& grad) {
  if (x.size() == 0) return 0.0;
  return (x - box.project_box(x - grad)).cwiseAbs().maxCoeff();
}

// min_{lambda >= 0} || grad + A_act^T lambda ||_2 over the rows active at x.
inline double normal_cone_distance(const Polytope& set, const Vec& grad,
                                   const std::vector<Index>& active) {
  if (active.empty()) return grad.norm();
  Mat At(set.dim(), static_cast<Index>(active.size()));
  for (std::size_t k = 0; k < active.size(); ++k)
    At.col(static_cast<Index>(k)) = set.A().row(active[k]).transpose();
  return nnls(At, -grad).residual_norm;
}

inline QpSolution solve_box_fista(const ProxQp& qp, double tol, int max_iter) {
  const Polytope& box = qp.set();
  const double lmax = symmetric_norm2(qp.M());
  const double step = 1.0 / lmax;
  Vec x = qp.center();
  Vec y = x;
  double t = 1.0;
  QpSolution sol;
  Vec best = x;
  double best_res = detail::box_projected_residual(box, x, qp.gradient(x));
  if (best_res <= tol) {
    sol.minimizer = x;
    sol.kkt_residual = best_res;
    return sol;
  }
  double prev_obj = qp.objective(x);
  for (int it = 1; it <= max_iter; ++it) {
    Vec x_next = box.project_box(y - step * qp.gradient(y));
    double obj = qp.objective(x_next);
    // adaptive restart on objective increase: drop momentum, take a plain step
    if (obj > prev_obj) {
      t = 1.0;
      x_next = box.project_box(x - step * qp.gradient(x));
      obj = qp.objective(x_next);
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = x_next + ((t - 1.0) / t_next) * (x_next - x);
    x = x_next;
    t = t_next;
    prev_obj = obj;
    const double res = detail::box_projected_residual(box, x, qp.gradient(x));
    if (res < best_res) {
      best_res = res;
      best = x;
    }
    sol.iterations = it;
    if (res <= tol) break;
  }
  if (best_res > tol)
    throw ConvergenceError("solve_prox_qp: projected gradient hit its iteration cap",
                           best, best_res);
  sol.minimizer = best;
  sol.kkt_residual = best_res;
  return sol;
}

// Primal active-set method started at the (feasible) center. Working-set
// changes use the smallest-index rule on ties.
inline QpSolution solve_polytope_active_set(const ProxQp& qp, double tol, int max_iter) {
  const Polytope& set = qp.set();
  const Mat& A = set.A();
  const Vec& b = set.b();
  const Index n = qp.g().size();
  const Index q = set.rows();

  Vec x = qp.center();
  std::vector<Index> working;
  QpSolution sol;
  const double scale = 1.0 + qp.M().cwiseAbs().maxCoeff() + qp.g().cwiseAbs().maxCoeff();

  for (int it = 0; it < max_iter; ++it) {
    sol.iterations = it + 1;
    const Vec gq = qp.gradient(x);
    const Index w = static_cast<Index>(working.size());
    Mat kkt = Mat::Zero(n + w, n + w);
    kkt.topLeftCorner(n, n) = qp.M();
    for (Index k = 0; k < w; ++k) {
      kkt.block(0, n + k, n, 1) = A.row(working[static_cast<std::size_t>(k)]).transpose();
      kkt.block(n + k, 0, 1, n) = A.row(working[static_cast<std::size_t>(k)]);
    }
    Vec rhs = Vec::Zero(n + w);
    rhs.head(n) = -gq;
    const Vec sol_kkt = kkt.fullPivLu().solve(rhs);
    const Vec p = sol_kkt.head(n);
    const Vec lambda = sol_kkt.tail(w);

    if (p.cwiseAbs().maxCoeff() <= 1e-14 * (1.0 + x.cwiseAbs().maxCoeff())) {
      Index leave = -1;
      double most_negative = -1e-12 * scale;
      for (Index k = 0; k < w; ++k) {
        if (lambda(k) < most_negative ||
            (leave >= 0 && lambda(k) == most_negative &&
             working[static_cast<std::size_t>(k)] < working[static_cast<std::size_t>(leave)])) {
          most_negative = lambda(k);
          leave = k;
        }
      }
      if (leave < 0) break;
      working.erase(working.begin() + leave);
      continue;
    }

    double alpha = 1.0;
    Index blocking = -1;
    for (Index j = 0; j < q; ++j) {
      if (std::find(working.begin(), working.end(), j) != working.end()) continue;
      const double ap = A.row(j).dot(p);
      if (ap <= 0.0) continue;
      const double tj = (b(j) - A.row(j).dot(x)) / ap;
      if (tj < alpha) {
        alpha = tj;
        blocking = j;
      }
    }
    alpha = std::max(alpha, 0.0);
    x += alpha * p;
    if (blocking >= 0) {
      working.push_back(blocking);
      std::sort(working.begin(), working.end());
    }
  }

  const auto active = set.active_rows(x);
  const double res = normal_cone_distance(set, qp.gradient(x), active);
  if (res > tol)
    throw ConvergenceError("solve_prox_qp: active-set method did not reach tolerance", x, res);
  sol.minimizer = x;
  sol.kkt_residual = res;
  sol.active_set = active;
  return sol;
}

}  // namespace detail

/// Data scale used to make the stopping tolerance relative:
/// max(1, |g|_inf, max|M_jk| (1 + |center|_inf)).
inline double qp_scale(const ProxQp& qp) {
  const double g = qp.g().size() ? qp.g().cwiseAbs().maxCoeff() : 0.0;
  const double m = qp.M().size() ? qp.M().cwiseAbs().maxCoeff() : 0.0;
  const double c = qp.center().size() ? qp.center().cwiseAbs().maxCoeff() : 0.0;
  return std::max({1.0, g, m * (1.0 + c)});
}

/// Solves a ProxQp to projected-stationarity residual <= tol * qp_scale(qp).
///
/// Boxes with diagonal M use the exact clipped Newton step; other boxes use
/// accelerated projected gradient; general polytopes use a small primal
/// active-set method.
inline QpSolution solve_prox_qp(const ProxQp& qp, double tol = 1e-10) {
  if (!(tol > 0.0)) throw PreconditionError("solve_prox_qp: tol must be positive");
  const Polytope& set = qp.set();
  if (!set.contains(qp.center(), 1e-10))
    throw PreconditionError("solve_prox_qp: center is not feasible");
  tol *= qp_scale(qp);

  QpSolution sol;
  if (set.is_box()) {
    if (qp.diagonal()) {
      const Vec newton = qp.center() - qp.g().cwiseQuotient(qp.M().diagonal());
      sol.minimizer = set.project_box(newton);
      sol.kkt_residual =
          detail::box_projected_residual(set, sol.minimizer, qp.gradient(sol.minimizer));
      sol.iterations = 1;
    } else {
      sol = detail::solve_box_fista(qp, tol, 200000);
    }
    sol.active_set = set.active_rows(sol.minimizer);
    return sol;
  }
  return detail::solve_polytope_active_set(qp, tol, 50 * static_cast<int>(set.rows() + qp.g().size()) + 50);
}

}  // namespace dalm
