#pragma once

#include <random>
#include <vector>

#include "dalm/dalm.hpp"

namespace dalm::testing {

/// One agent, cost 1/2 x^T P x, no constraints, box [lo, hi]^n.
inline NlpProblem quadratic_problem(const Mat& P, double lo, double hi) {
  AgentSpec a;
  a.dim = P.rows();
  a.cost = [P](const Vec& x) { return 0.5 * x.dot(P * x); };
  a.cost_gradient = [P](const Vec& x) -> Vec { return P * x; };
  a.set = Polytope::box(P.rows(), lo, hi);
  return NlpProblem({std::move(a)}, CouplingSpec{});
}

/// One agent, cost g^T x, no constraints, over `set`.
inline NlpProblem linear_problem(const Vec& g, Polytope set) {
  AgentSpec a;
  a.dim = g.size();
  a.cost = [g](const Vec& x) { return g.dot(x); };
  a.cost_gradient = [g](const Vec&) -> Vec { return g; };
  a.set = std::move(set);
  return NlpProblem({std::move(a)}, CouplingSpec{});
}

/// N agents with cost 1/2 |x - t_i|^2 weighted by w_i, box [-1, 1]^d, no coupling.
inline NlpProblem separable_convex(const std::vector<Vec>& targets, const std::vector<double>& w) {
  std::vector<AgentSpec> agents;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    AgentSpec a;
    const Vec t = targets[i];
    const double wi = w[i];
    a.dim = t.size();
    a.cost = [t, wi](const Vec& x) { return 0.5 * wi * (x - t).squaredNorm(); };
    a.cost_gradient = [t, wi](const Vec& x) -> Vec { return wi * (x - t); };
    a.set = Polytope::box(t.size(), -1.0, 1.0);
    agents.push_back(std::move(a));
  }
  return NlpProblem(std::move(agents), CouplingSpec{});
}

/// Coupling with only an interaction edge set (for colouring tests).
inline CouplingSpec edges_only(std::vector<std::pair<std::size_t, std::size_t>> edges) {
  CouplingSpec cs;
  cs.edges = std::move(edges);
  return cs;
}

inline Vec uniform_vec(std::mt19937_64& rng, Index n, double lo, double hi) {
  Vec v(n);
  for (Index k = 0; k < n; ++k) v(k) = lo + (hi - lo) * unit_uniform(rng);
  return v;
}

inline Mat random_spd(std::mt19937_64& rng, Index n, double shift) {
  Mat a(n, n);
  for (Index k = 0; k < n * n; ++k) a(k) = symmetric_uniform(rng);
  return a * a.transpose() + shift * Mat::Identity(n, n);
}

}  // namespace dalm::testing
