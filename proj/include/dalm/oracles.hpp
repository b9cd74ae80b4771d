#pragma once

#include <cmath>
#include <exception>
#include <random>
#include <string>
#include <vector>

#include "dalm/bench.hpp"
#include "dalm/core.hpp"
#include "dalm/io.hpp"
#include "dalm/model.hpp"
#include "dalm/outer_mm.hpp"
#include "dalm/subqp.hpp"
#include "dalm/verify.hpp"

namespace dalm {

/// min x^2  s.t.  x^2 - 1 = 0,  -2 <= x <= 2.  KKT points x = +-1, mu = -1.
inline NlpProblem make_one_agent_problem() {
  AgentSpec a;
  a.dim = 1;
  a.num_constraints = 1;
  a.cost = [](const Vec& x) { return x(0) * x(0); };
  a.cost_gradient = [](const Vec& x) -> Vec { return 2.0 * x; };
  a.constraint = [](const Vec& x) { return Vec::Constant(1, x(0) * x(0) - 1.0); };
  a.constraint_jacobian = [](const Vec& x) -> Mat { return Mat::Constant(1, 1, 2.0 * x(0)); };
  a.set = Polytope::box(1, -2.0, 2.0);
  a.hessian_bound_hint = [](double rho, double mu_inf) {
    return 2.0 + 2.0 * mu_inf + rho * (12.0 * 4.0 + 2.0);
  };
  return NlpProblem({std::move(a)}, CouplingSpec{});
}

/// Minimum of a box QP by a grid over all coordinates but the last, which is
/// minimised exactly. Only for small n.
inline double grid_qp_minimum(const ProxQp& qp, double step) {
  const Polytope& set = qp.set();
  if (!set.is_box()) throw PreconditionError("grid_qp_minimum: box sets only");
  const Index n = qp.g().size();
  const Vec& lo = set.lower();
  const Vec& hi = set.upper();
  std::vector<Index> counts(static_cast<std::size_t>(n - 1));
  for (Index k = 0; k + 1 < n; ++k)
    counts[static_cast<std::size_t>(k)] =
        static_cast<Index>(std::floor((hi(k) - lo(k)) / step + 1e-9)) + 1;
  std::vector<Index> idx(counts.size(), 0);
  const Index last = n - 1;
  const double mll = qp.M()(last, last);
  double best = std::numeric_limits<double>::infinity();
  Vec x(n);
  while (true) {
    for (Index k = 0; k < last; ++k)
      x(k) = std::min(lo(k) + step * static_cast<double>(idx[static_cast<std::size_t>(k)]), hi(k));
    x(last) = qp.center()(last);
    // exact 1-d minimisation in the last coordinate
    const double slope = qp.gradient(x)(last);
    x(last) = std::clamp(x(last) - slope / mll, lo(last), hi(last));
    best = std::min(best, qp.objective(x));
    std::size_t k = 0;
    while (k < idx.size() && ++idx[k] == counts[k]) idx[k++] = 0;
    if (k == idx.size()) break;
  }
  return best;
}

struct OracleCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// The built-in oracle suite run by `verify`.
inline std::vector<OracleCheck> run_oracle_suite(std::uint64_t seed = 1) {
  std::vector<OracleCheck> out;
  auto guarded = [&](const std::string& name, auto&& body) {
    OracleCheck c;
    c.name = name;
    try {
      body(c);
    } catch (const std::exception& e) {
      c.passed = false;
      c.detail = std::string("exception: ") + e.what();
    }
    out.push_back(std::move(c));
  };

  guarded("fd_gradient_toy", [&](OracleCheck& c) {
    ToyParams p;
    p.agents = 5;
    p.seed = seed;
    const ToyProblem toy = generate_toy(p);
    double worst = 0.0;
    for (std::uint64_t k = 0; k < 10; ++k) {
      auto [z, mu] = random_start(toy, seed + 100 + k);
      z.flat() *= 0.9;  // keep an fd margin from the box
      worst = std::max(worst, fd_gradient_check(toy.problem, z, mu, 10.0));
    }
    c.passed = worst <= 1e-5;
    c.detail = "max relative error " + format_double(worst);
  });

  guarded("one_agent_kkt", [&](OracleCheck& c) {
    const NlpProblem p = make_one_agent_problem();
    OuterConfig oc;
    oc.eta = 1e-8;
    BlockVector z0 = p.zeros();
    z0.flat()(0) = 2.0;
    const OuterResult r = run_outer(p, oc, InnerConfig{}, z0, p.zero_multipliers());
    const double x = r.state.z.flat()(0);
    const double mu = r.state.mu.flat()(0);
    const KktReport rep = kkt_report(p, r.state.z, r.state.mu, r.state.rho);
    c.passed = r.status == OuterStatus::Converged && std::abs(std::abs(x) - 1.0) <= 1e-6 &&
               std::abs(mu + 1.0) <= 1e-4 && rep.regular;
    c.detail = "x " + format_double(x) + ", mu " + format_double(mu) + ", status " +
               to_string(r.status);
  });

  guarded("qp_vs_grid", [&](OracleCheck& c) {
    std::mt19937_64 rng(seed);
    const Polytope box = Polytope::box(3, -1.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 3; ++trial) {
      Mat a(3, 3);
      for (Index i = 0; i < 9; ++i) a(i) = symmetric_uniform(rng);
      const Mat m = a * a.transpose() + 0.5 * Mat::Identity(3, 3);
      Vec g(3), center(3);
      for (Index i = 0; i < 3; ++i) g(i) = 3.0 * symmetric_uniform(rng);
      for (Index i = 0; i < 3; ++i) center(i) = symmetric_uniform(rng);
      const ProxQp qp(g, m, center, box);
      const QpSolution sol = solve_prox_qp(qp);
      const double grid = grid_qp_minimum(qp, 1e-3);
      worst = std::max(worst, std::abs(qp.objective(sol.minimizer) - grid));
    }
    c.passed = worst <= 1e-4;
    c.detail = "max |QP - grid| " + format_double(worst);
  });

  guarded("brute_force_two_agent", [&](OracleCheck& c) {
    ToyParams p;
    p.agents = 2;
    p.dim = 1;
    p.scale = 4.0;
    p.seed = seed;
    const ToyProblem toy = generate_toy(p);
    const BruteForceResult bf = brute_force_min(toy.problem, 1e-3);
    std::vector<BlockVector> starts;
    for (std::uint64_t k = 0; k < 8; ++k) starts.push_back(random_start(toy, seed + k).first);
    OuterConfig oc;
    oc.eta = 1e-8;
    const MultiStartResult ms =
        run_multistart(toy.problem, oc, InnerConfig{}, starts, toy.problem.zero_multipliers());
    const double gap = std::abs(ms.objective - bf.value);
    c.passed = ms.best.status == OuterStatus::Converged && gap <= 2e-3;
    c.detail = "solver " + format_double(ms.objective) + ", grid " + format_double(bf.value);
  });

  return out;
}

}  // namespace dalm
