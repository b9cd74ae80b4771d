#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "dalm/core.hpp"
#include "dalm/inner_bcd.hpp"
#include "dalm/model.hpp"
#include "dalm/outer_mm.hpp"

namespace dalm {

/// Parameters of the random chain family
///
///   min sum_i x_i^T H_i x_i + sum_i x_i^T H_{i,i+1} x_{i+1}
///   s.t. ||x_i||^2 = a^2,  -box <= x_ij <= box,
///
/// with a = sqrt(R) and box = 0.6 R.
struct ToyParams {
  std::size_t agents = 20;  // N
  Index dim = 3;            // d
  double scale = 2.0;       // R
  std::uint64_t seed = 0;

  double radius() const { return std::sqrt(scale); }
  double box() const { return 0.6 * scale; }
  /// The sphere of radius a meets the box iff a <= box * sqrt(d).
  bool feasible() const { return radius() <= box() * std::sqrt(static_cast<double>(dim)); }
};

/// Uniform [0, 1) from the top 53 bits of a mt19937_64 draw.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}
/// Uniform [-1, 1).
inline double symmetric_uniform(std::mt19937_64& rng) { return 2.0 * unit_uniform(rng) - 1.0; }

struct ToyProblem {
  ToyParams params;
  std::vector<Mat> local;     // H_i, symmetric
  std::vector<Mat> coupling;  // H_{i,i+1}
  NlpProblem problem;

  /// max_i | ||x_i||^2 - a^2 |
  double sphere_violation(const BlockVector& z) const {
    double worst = 0.0;
    const double a2 = params.scale;
    for (std::size_t i = 0; i < z.num_blocks(); ++i)
      worst = std::max(worst, std::abs(z.block(i).squaredNorm() - a2));
    return worst;
  }

  /// Number of H_i that are (semi)definite rather than indefinite.
  std::size_t definite_count() const {
    std::size_t n = 0;
    for (const auto& h : local) {
      Eigen::SelfAdjointEigenSolver<Mat> es(h, Eigen::EigenvaluesOnly);
      if (es.eigenvalues().minCoeff() >= 0.0 || es.eigenvalues().maxCoeff() <= 0.0) ++n;
    }
    return n;
  }
};

/// Builds a seeded instance. Matrix entries are drawn i.i.d. uniform on [-1, 1)
/// from mt19937_64(seed) in this order: for each i the d x d matrix A_i
/// row-major (H_i = (A_i + A_i^T) / 2), then each H_{i,i+1} row-major.
inline ToyProblem generate_toy(const ToyParams& params) {
  if (params.agents < 2) throw PreconditionError("generate_toy: need at least 2 agents");
  if (params.dim < 1) throw PreconditionError("generate_toy: dimension must be positive");
  if (!(params.scale > 0.0)) throw PreconditionError("generate_toy: R must be positive");

  const std::size_t N = params.agents;
  const Index d = params.dim;
  std::mt19937_64 rng(params.seed);
  auto draw = [&] {
    Mat m(d, d);
    for (Index r = 0; r < d; ++r)
      for (Index c = 0; c < d; ++c) m(r, c) = symmetric_uniform(rng);
    return m;
  };
  auto local = std::make_shared<std::vector<Mat>>();
  auto coup = std::make_shared<std::vector<Mat>>();
  for (std::size_t i = 0; i < N; ++i) {
    const Mat a = draw();
    local->push_back(0.5 * (a + a.transpose()));
  }
  for (std::size_t i = 0; i + 1 < N; ++i) coup->push_back(draw());

  const double a2 = params.scale;
  const double b = params.box();
  // ||grad^2 Psi_i|| <= 2|mu| + rho (2 max(d b^2 - a^2, a^2) + 4 d b^2) on the box
  const double db2 = static_cast<double>(d) * b * b;
  const double penalty_curv = 2.0 * std::max(db2 - a2, a2) + 4.0 * db2;

  std::vector<AgentSpec> agents;
  for (std::size_t i = 0; i < N; ++i) {
    AgentSpec ag;
    ag.dim = d;
    ag.num_constraints = 1;
    ag.cost = [local, i](const Vec& x) { return x.dot((*local)[i] * x); };
    ag.cost_gradient = [local, i](const Vec& x) -> Vec { return 2.0 * ((*local)[i] * x); };
    ag.constraint = [a2](const Vec& x) { return Vec::Constant(1, x.squaredNorm() - a2); };
    ag.constraint_jacobian = [](const Vec& x) -> Mat { return 2.0 * x.transpose(); };
    ag.set = Polytope::box(d, -b, b);
    const double hnorm = 2.0 * symmetric_norm2((*local)[i]);
    ag.hessian_bound_hint = [hnorm, penalty_curv](double rho, double mu_inf) {
      return hnorm + 2.0 * mu_inf + rho * penalty_curv;
    };
    agents.push_back(std::move(ag));
  }

  CouplingSpec cs;
  cs.cost = [coup](const BlockVector& z) {
    double v = 0.0;
    for (std::size_t i = 0; i < coup->size(); ++i)
      v += z.block(i).dot((*coup)[i] * z.block(i + 1));
    return v;
  };
  cs.cost_gradient = [coup](const BlockVector& z, std::size_t i) -> Vec {
    Vec g = Vec::Zero(z.dim(i));
    if (i < coup->size()) g += (*coup)[i] * z.block(i + 1);
    if (i > 0) g += (*coup)[i - 1].transpose() * z.block(i - 1);
    return g;
  };
  for (std::size_t i = 0; i + 1 < N; ++i) cs.edges.emplace_back(i, i + 1);

  return ToyProblem{params, *local, *coup, NlpProblem(std::move(agents), std::move(cs))};
}

/// Seeded start: primal uniform in the box, duals uniform on [-1, 1).
/// Uses its own stream so it does not perturb the instance draw.
inline std::pair<BlockVector, MultiplierEstimate> random_start(const ToyProblem& toy,
                                                               std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0xD1B54A32D192ED03ULL);
  BlockVector z = toy.problem.zeros();
  const double b = toy.params.box();
  for (Index k = 0; k < z.total_dim(); ++k) z.flat()(k) = b * symmetric_uniform(rng);
  MultiplierEstimate mu = toy.problem.zero_multipliers();
  for (Index k = 0; k < mu.size(); ++k) mu.flat()(k) = symmetric_uniform(rng);
  return {std::move(z), std::move(mu)};
}

/// Splits `total` sweeps evenly over `outer` iterations; the remainder goes
/// to the earliest iterations.
inline std::vector<std::size_t> split_budget(std::size_t total, std::size_t outer) {
  std::vector<std::size_t> out(outer, total / outer);
  for (std::size_t k = 0; k < total % outer; ++k) ++out[k];
  return out;
}

struct StatsConfig {
  std::size_t outer_iterations = 5;
  OuterConfig outer = [] {
    OuterConfig c;
    c.rho0 = 0.1;
    c.beta = 100.0;
    c.eps0 = 1e-2;
    c.stop_on_eta = false;
    return c;
  }();
  InnerConfig inner = [] {
    InnerConfig c;
    c.b_strategy = FixedScaled{30.0};
    c.tau = 1e-12;
    return c;
  }();
  unsigned threads = 0;  // instance-level workers
};

/// One solver run of the experiment.
struct RunRecord {
  std::size_t instance = 0;
  std::uint64_t seed = 0;
  std::size_t budget = 0;
  bool failed = false;
  std::string error;
  double violation = 0.0;  // max_i | ||x_i||^2 - a^2 | at termination
  OuterStatus status = OuterStatus::IterationCap;
  std::vector<IterTrace> trace;
};

struct RunStats {
  std::vector<std::size_t> budgets;
  std::vector<double> tolerances;
  std::size_t instances = 0;
  /// fraction[b][t]: share of instances with violation <= tolerances[t] at budgets[b].
  std::vector<std::vector<double>> fraction;
  std::size_t failures = 0;
  std::size_t definite_draws = 0;  // H_i that came out definite
};

/// Runs every (instance, budget) pair with a fresh start and aggregates the
/// feasibility success fractions. Records reach `sink` in (instance, budget)
/// order regardless of threading.
inline RunStats run_statistics(const ToyParams& base, std::size_t instances,
                               const std::vector<std::size_t>& budgets,
                               const std::vector<double>& tolerances,
                               const StatsConfig& cfg = {},
                               const std::function<void(const RunRecord&)>& sink = {}) {
  if (instances == 0) throw PreconditionError("run_statistics: need at least one instance");
  if (cfg.outer_iterations == 0) throw ConfigError("run_statistics: outer_iterations must be positive");
  cfg.outer.validate();

  std::vector<std::vector<RunRecord>> records(instances);
  std::vector<std::size_t> definite(instances, 0);
  auto run_instance = [&](std::size_t idx) {
    ToyParams p = base;
    p.seed = base.seed + idx;
    const ToyProblem toy = generate_toy(p);
    definite[idx] = toy.definite_count();
    const auto [z0, mu0] = random_start(toy, p.seed);
    for (std::size_t budget : budgets) {
      RunRecord rec;
      rec.instance = idx;
      rec.seed = p.seed;
      rec.budget = budget;
      OuterConfig oc = cfg.outer;
      oc.max_outer = cfg.outer_iterations;
      oc.stop_on_eta = false;
      oc.sweep_budgets = split_budget(budget, cfg.outer_iterations);
      try {
        const OuterResult res = run_outer(toy.problem, oc, cfg.inner, z0, mu0);
        rec.violation = toy.sphere_violation(res.state.z);
        rec.status = res.status;
        rec.trace = res.state.trace;
      } catch (const std::exception& e) {
        rec.failed = true;
        rec.error = e.what();
        rec.violation = std::numeric_limits<double>::infinity();
      }
      records[idx].push_back(std::move(rec));
    }
  };

  const unsigned workers = std::min<unsigned>(cfg.threads, static_cast<unsigned>(instances));
  if (workers <= 1) {
    for (std::size_t idx = 0; idx < instances; ++idx) run_instance(idx);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t idx = w; idx < instances; idx += workers) run_instance(idx);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    pool.clear();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  RunStats stats;
  stats.budgets = budgets;
  stats.tolerances = tolerances;
  stats.instances = instances;
  stats.fraction.assign(budgets.size(), std::vector<double>(tolerances.size(), 0.0));
  std::vector<std::vector<std::size_t>> hits(budgets.size(),
                                             std::vector<std::size_t>(tolerances.size(), 0));
  for (std::size_t idx = 0; idx < instances; ++idx) {
    stats.definite_draws += definite[idx];
    for (std::size_t b = 0; b < budgets.size(); ++b) {
      const RunRecord& rec = records[idx][b];
      if (rec.failed) ++stats.failures;
      for (std::size_t t = 0; t < tolerances.size(); ++t)
        if (!rec.failed && rec.violation <= tolerances[t]) ++hits[b][t];
      if (sink) sink(rec);
    }
  }
  for (std::size_t b = 0; b < budgets.size(); ++b)
    for (std::size_t t = 0; t < tolerances.size(); ++t)
      stats.fraction[b][t] =
          static_cast<double>(hits[b][t]) / static_cast<double>(instances);
  return stats;
}

}  // namespace dalm
