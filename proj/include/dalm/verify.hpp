#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "dalm/core.hpp"
#include "dalm/linalg.hpp"
#include "dalm/model.hpp"

namespace dalm {

/// Relative slack used to decide whether a polytope row is active.
inline constexpr double kActiveTol = 1e-8;

/// Distance from 0 to grad + N_Z(x) for a single polytope.
///
/// Boxes use the per-coordinate closed form; general polytopes solve
/// min_{lambda >= 0} || grad + A_act^T lambda ||_2.
inline double block_criticality_residual(const Polytope& set, const Vec& x, const Vec& grad) {
  if (set.is_box()) {
    double acc = 0.0;
    for (Index j = 0; j < x.size(); ++j) {
      const double up = set.upper()(j), lo = set.lower()(j);
      const bool at_upper = up - x(j) <= kActiveTol * (1.0 + std::abs(up));
      const bool at_lower = x(j) - lo <= kActiveTol * (1.0 + std::abs(lo));
      double r = grad(j);
      if (at_upper && at_lower) r = 0.0;
      else if (at_upper) r = std::max(grad(j), 0.0);
      else if (at_lower) r = std::min(grad(j), 0.0);
      acc += r * r;
    }
    return std::sqrt(acc);
  }
  const auto active = set.active_rows(x, kActiveTol);
  if (active.empty()) return grad.norm();
  Mat At(set.dim(), static_cast<Index>(active.size()));
  for (std::size_t k = 0; k < active.size(); ++k)
    At.col(static_cast<Index>(k)) = set.A().row(active[k]).transpose();
  return nnls(At, -grad).residual_norm;
}

inline void require_in_set(const NlpProblem& problem, const BlockVector& z,
                           const char* where) {
  problem.check(z);
  if (!problem.feasible(z, 1e-10))
    throw PreconditionError(std::string(where) + ": z is outside Z");
}

/// d(0, grad L_rho(z, mu) + N_Z(z)), the inexactness measure of an inner solve.
inline double criticality_residual(const NlpProblem& problem, const BlockVector& z,
                                   const MultiplierEstimate& mu, double rho) {
  require_in_set(problem, z, "criticality_residual");
  double acc = 0.0;
  for (std::size_t i = 0; i < problem.num_agents(); ++i) {
    const Vec g = eval_block_gradient(problem, z, mu, rho, i);
    acc += sqr(block_criticality_residual(problem.agent(i).set, z.block(i), g));
  }
  return std::sqrt(acc);
}

struct KktReport {
  double stationarity = 0.0;  // criticality residual
  double feasibility = 0.0;   // ||H(z)||_inf
  std::vector<Index> active;  // rows of the stacked A, in block order
  Vec lambda;                 // multipliers of the active rows, >= 0
  bool regular = false;
};

/// True iff grad H(z) has numerical row rank r at `rank_tol`.
inline bool regularity_check(const NlpProblem& problem, const BlockVector& z,
                             double rank_tol = 1e-8, std::string* diagnostic = nullptr) {
  const Index r = problem.num_constraints();
  const Index n = problem.total_dim();
  if (r == 0) return true;
  if (r > n) {
    if (diagnostic) *diagnostic = "more constraints (" + std::to_string(r) +
                                  ") than variables (" + std::to_string(n) + ")";
    return false;
  }
  const Mat jac = eval_constraint_jacobian(problem, z);
  const Index rank = numerical_rank(jac, rank_tol);
  if (diagnostic)
    *diagnostic = "rank " + std::to_string(rank) + " of " + std::to_string(r);
  return rank == r;
}

inline KktReport kkt_report(const NlpProblem& problem, const BlockVector& z,
                            const MultiplierEstimate& mu, double rho,
                            double rank_tol = 1e-8) {
  require_in_set(problem, z, "kkt_report");
  KktReport rep;
  rep.stationarity = criticality_residual(problem, z, mu, rho);
  const Vec h = eval_constraints(problem, z);
  rep.feasibility = h.size() ? h.cwiseAbs().maxCoeff() : 0.0;
  std::vector<double> lambdas;
  Index row_offset = 0;
  for (std::size_t i = 0; i < problem.num_agents(); ++i) {
    const Polytope& set = problem.agent(i).set;
    const auto active = set.active_rows(z.block(i), kActiveTol);
    if (!active.empty()) {
      const Vec g = eval_block_gradient(problem, z, mu, rho, i);
      Mat At(set.dim(), static_cast<Index>(active.size()));
      for (std::size_t k = 0; k < active.size(); ++k)
        At.col(static_cast<Index>(k)) = set.A().row(active[k]).transpose();
      const auto res = nnls(At, -g);
      for (std::size_t k = 0; k < active.size(); ++k) {
        rep.active.push_back(row_offset + active[k]);
        lambdas.push_back(res.x(static_cast<Index>(k)));
      }
    }
    row_offset += set.rows();
  }
  rep.lambda = Eigen::Map<const Vec>(lambdas.data(), static_cast<Index>(lambdas.size()));
  rep.regular = regularity_check(problem, z, rank_tol);
  return rep;
}

/// Worst relative error between eval_block_gradient and central differences
/// of eval_aug_lagrangian. Step per coordinate is h * max(1, |z_k|).
inline double fd_gradient_check(const NlpProblem& problem, const BlockVector& z,
                                const MultiplierEstimate& mu, double rho, double h = 1e-6) {
  problem.check(z);
  if (!(h > 0.0)) throw PreconditionError("fd_gradient_check: step must be positive");
  for (std::size_t i = 0; i < problem.num_agents(); ++i) {
    const Polytope& set = problem.agent(i).set;
    const Vec zi = z.block(i);
    const double hmax = h * std::max(1.0, zi.cwiseAbs().maxCoeff());
    const Vec s = set.slacks(zi);
    for (Index j = 0; j < set.rows(); ++j)
      if (s(j) < hmax * set.A().row(j).cwiseAbs().sum())
        throw PreconditionError("fd_gradient_check: z is within one step of the boundary of Z_" +
                                std::to_string(i));
  }
  double worst = 0.0;
  BlockVector zp = z;
  for (std::size_t i = 0; i < problem.num_agents(); ++i) {
    const Vec g = eval_block_gradient(problem, z, mu, rho, i);
    Vec fd(g.size());
    for (Index k = 0; k < g.size(); ++k) {
      const Index idx = z.offset(i) + k;
      const double step = h * std::max(1.0, std::abs(z.flat()(idx)));
      zp.flat()(idx) = z.flat()(idx) + step;
      const double up = eval_aug_lagrangian(problem, zp, mu, rho);
      zp.flat()(idx) = z.flat()(idx) - step;
      const double down = eval_aug_lagrangian(problem, zp, mu, rho);
      zp.flat()(idx) = z.flat()(idx);
      fd(k) = (up - down) / (2.0 * step);
    }
    const double scale = std::max(1.0, g.cwiseAbs().maxCoeff());
    worst = std::max(worst, (fd - g).cwiseAbs().maxCoeff() / scale);
  }
  return worst;
}

/// Grid search objective for brute_force_min.
struct ConstrainedGrid {
  double band = 1e-2;     // keep points with ||H||_inf <= band
  double penalty = 10.0;  // rank kept points by J + penalty * ||H||_1
};
struct AugLagrangianGrid {
  MultiplierEstimate mu;
  double rho = 1.0;
};
using BruteForceObjective = std::variant<ConstrainedGrid, AugLagrangianGrid>;

struct BruteForceResult {
  BlockVector z_best;
  double value = 0.0;      // J(z_best) or L_rho(z_best)
  double score = 0.0;      // ranking score that was minimized
  double feasibility = 0.0;  // ||H(z_best)||_inf
  std::size_t points = 0;  // block combinations examined
  std::size_t candidates = 0;  // points that passed the band filter
};

/// Exhaustive grid search over Z for tiny problems (n <= 4).
///
/// In ConstrainedGrid mode, points with ||H||_inf <= band are ranked by the
/// exact-penalty score J + penalty * ||H||_1 and the J value of the winner is
/// reported; penalty must exceed the optimal multipliers in magnitude. In
/// AugLagrangianGrid mode, L_rho is minimized over all grid points.
inline BruteForceResult brute_force_min(const NlpProblem& problem, double grid_step,
                                        const BruteForceObjective& objective = ConstrainedGrid{},
                                        std::size_t max_points = 50'000'000) {
  const Index n = problem.total_dim();
  if (n > 4)
    throw RefusalError("brute_force_min: total dimension " + std::to_string(n) + " exceeds 4");
  if (!(grid_step > 0.0)) throw PreconditionError("brute_force_min: grid step must be positive");

  const bool constrained = std::holds_alternative<ConstrainedGrid>(objective);
  const ConstrainedGrid cg = constrained ? std::get<ConstrainedGrid>(objective) : ConstrainedGrid{};
  const AugLagrangianGrid* al = constrained ? nullptr : &std::get<AugLagrangianGrid>(objective);
  if (al) {
    require_positive_rho(al->rho);
    problem.check(al->mu);
  }

  // Per-block candidates: grid points inside Z_i with their separable terms.
  struct Cand {
    Vec x;
    double sep_score;  // J_i (+ Psi_i or penalty * ||F_i||_1)
    double cost;       // J_i
    double finf;       // ||F_i||_inf
  };
  std::vector<std::vector<Cand>> cands(problem.num_agents());
  double total = 1.0;
  BruteForceResult result;
  for (std::size_t i = 0; i < problem.num_agents(); ++i) {
    const auto& agent = problem.agent(i);
    const auto [lo, hi] = agent.set.bounding_box();
    std::vector<Index> counts(static_cast<std::size_t>(agent.dim));
    double block_points = 1.0;
    for (Index k = 0; k < agent.dim; ++k) {
      counts[static_cast<std::size_t>(k)] =
          static_cast<Index>(std::floor((hi(k) - lo(k)) / grid_step + 1e-9)) + 1;
      block_points *= static_cast<double>(counts[static_cast<std::size_t>(k)]);
    }
    total *= block_points;
    if (total > static_cast<double>(max_points))
      throw RefusalError("brute_force_min: grid has more than " + std::to_string(max_points) +
                         " points");
    std::vector<Index> idx(static_cast<std::size_t>(agent.dim), 0);
    Vec x(agent.dim);
    while (true) {
      for (Index k = 0; k < agent.dim; ++k)
        x(k) = std::min(lo(k) + static_cast<double>(idx[static_cast<std::size_t>(k)]) * grid_step,
                        hi(k));
      if (agent.set.contains(x)) {
        const double c = problem.cost(i, x);
        const Vec f = problem.constraint(i, x);
        const double finf = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
        if (constrained) {
          if (finf <= cg.band)
            cands[i].push_back({x, c + cg.penalty * f.cwiseAbs().sum(), c, finf});
        } else {
          cands[i].push_back(
              {x, c + al->mu.agent(i).dot(f) + 0.5 * al->rho * f.squaredNorm(), c, finf});
        }
      }
      Index k = 0;
      while (k < agent.dim && ++idx[static_cast<std::size_t>(k)] == counts[static_cast<std::size_t>(k)]) {
        idx[static_cast<std::size_t>(k)] = 0;
        ++k;
      }
      if (k == agent.dim) break;
    }
    if (cands[i].empty()) {
      throw RefusalError("brute_force_min: no grid point of block " + std::to_string(i) +
                         " satisfies the feasibility band " + std::to_string(cg.band));
    }
  }

  BlockVector z = problem.zeros();
  std::vector<std::size_t> pick(problem.num_agents(), 0);
  double best = std::numeric_limits<double>::infinity();
  bool found = false;
  while (true) {
    double sep = 0.0, cost = 0.0, finf = 0.0;
    for (std::size_t i = 0; i < pick.size(); ++i) {
      const Cand& c = cands[i][pick[i]];
      z.block(i) = c.x;
      sep += c.sep_score;
      cost += c.cost;
      finf = std::max(finf, c.finf);
    }
    ++result.points;
    const double q = problem.coupling_cost(z);
    const Vec g = problem.coupling_constraint(z);
    const double ginf = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
    double score = 0.0;
    bool keep = true;
    if (constrained) {
      keep = ginf <= cg.band;
      score = sep + q + cg.penalty * g.cwiseAbs().sum();
    } else {
      score = sep + q + al->mu.coupling().dot(g) + 0.5 * al->rho * g.squaredNorm();
    }
    if (keep) {
      ++result.candidates;
      if (score < best) {
        best = score;
        found = true;
        result.z_best = z;
        result.score = score;
        result.value = constrained ? cost + q : score;
        result.feasibility = std::max(finf, ginf);
      }
    }
    std::size_t i = 0;
    while (i < pick.size() && ++pick[i] == cands[i].size()) {
      pick[i] = 0;
      ++i;
    }
    if (i == pick.size()) break;
  }
  if (!found)
    throw RefusalError("brute_force_min: no grid point satisfies the feasibility band " +
                       std::to_string(cg.band));
  return result;
}

}  // namespace dalm
