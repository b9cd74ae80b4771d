#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dalm/core.hpp"
#include "dalm/inner_bcd.hpp"
#include "dalm/model.hpp"
#include "dalm/verify.hpp"

namespace dalm {

enum class ConstraintNorm { Inf, Two };

inline double constraint_norm(const Vec& h, ConstraintNorm norm) {
  if (h.size() == 0) return 0.0;
  return norm == ConstraintNorm::Inf ? h.cwiseAbs().maxCoeff() : h.norm();
}

struct OuterConfig {
  double rho0 = 1.0;
  double beta = 10.0;
  double eps0 = 1e-2;
  double eta = 1e-6;
  std::size_t max_outer = 30;
  ConstraintNorm norm = ConstraintNorm::Inf;
  /// When false the loop always runs max_outer iterations.
  bool stop_on_eta = true;
  /// Optional sweep cap for each outer iteration; entries past the end fall
  /// back to InnerConfig::max_sweeps.
  std::vector<std::size_t> sweep_budgets;

  void validate() const {
    if (!(rho0 > 0.0) || !std::isfinite(rho0)) throw ConfigError("OuterConfig: rho0 must be positive");
    if (!(beta > 1.0) || !std::isfinite(beta)) throw ConfigError("OuterConfig: beta must exceed 1");
    if (!(eps0 > 0.0)) throw ConfigError("OuterConfig: eps0 must be positive");
    if (!(eta > 0.0)) throw ConfigError("OuterConfig: eta must be positive");
    if (max_outer == 0) throw ConfigError("OuterConfig: max_outer must be positive");
  }
};

/// One row per outer iteration. rho, eps and mu-dependent values are those
/// in force during the iteration, before the updates at its end.
struct IterTrace {
  std::size_t k = 0;
  double rho = 0.0;
  double eps = 0.0;
  double h_inf = 0.0;
  double h_two = 0.0;
  double lagrangian = 0.0;
  double residual = 0.0;
  std::size_t sweeps = 0;
  std::size_t cumulative_sweeps = 0;
  bool certificates_ok = true;
  bool inner_met_target = false;
};

struct OuterState {
  BlockVector z;
  MultiplierEstimate mu;
  double rho = 0.0;
  double eps = 0.0;
  std::size_t k = 0;
  std::vector<IterTrace> trace;
};

enum class OuterStatus { Converged, IterationCap, InnerFailure };

inline const char* to_string(OuterStatus s) {
  switch (s) {
    case OuterStatus::Converged: return "converged";
    case OuterStatus::IterationCap: return "iteration_cap";
    case OuterStatus::InnerFailure: return "inner_failure";
  }
  return "unknown";
}

struct OuterResult {
  OuterState state;
  OuterStatus status = OuterStatus::IterationCap;
};

/// mu + rho * H, partition preserved.
inline MultiplierEstimate dual_update(const MultiplierEstimate& mu, double rho, const Vec& h) {
  if (h.size() != mu.size())
    throw StructuralError("dual_update: H has length " + std::to_string(h.size()) +
                          ", expected " + std::to_string(mu.size()));
  MultiplierEstimate out = mu;
  out.flat() += rho * h;
  return out;
}

/// Method of multipliers with only H(z) = 0 penalised: each iteration solves
/// the inner problem to criticality residual eps warm-started at the current
/// z, then sets mu <- mu + rho H(z), eps <- min(eps / rho, eps0), rho <- beta rho.
/// Stops once ||H(z)|| <= eta; the status is Converged only when that
/// iteration's inner solve also reached eps, and InnerFailure otherwise.
inline OuterResult run_outer(const NlpProblem& problem, const OuterConfig& cfg,
                             const InnerConfig& inner_cfg, const BlockVector& z0,
                             const MultiplierEstimate& mu0,
                             const std::function<void(const OuterState&)>& observer = {},
                             const std::optional<UpdateSchedule>& schedule = std::nullopt) {
  cfg.validate();
  inner_cfg.validate(problem.num_agents());
  problem.check(z0);
  problem.check(mu0);
  if (!problem.feasible(z0, 1e-10)) throw PreconditionError("run_outer: z0 is outside Z");

  OuterResult out;
  OuterState& st = out.state;
  st.z = z0;
  st.mu = mu0;
  st.rho = cfg.rho0;
  st.eps = cfg.eps0;

  const UpdateSchedule sched =
      schedule ? *schedule
               : color_interaction_graph(problem.coupling(), problem.num_agents()).classes();
  std::size_t cumulative = 0;
  bool last_met = false;
  for (std::size_t k = 0; k < cfg.max_outer; ++k) {
    InnerConfig icfg = inner_cfg;
    icfg.target_residual = st.eps;
    if (k < cfg.sweep_budgets.size()) icfg.max_sweeps = cfg.sweep_budgets[k];

    IterTrace row;
    row.k = k;
    row.rho = st.rho;
    row.eps = st.eps;
    if (icfg.max_sweeps > 0) {
      InnerResult inner = run_inner(problem, st.z, st.mu, st.rho, icfg, sched);
      st.z = std::move(inner.z);
      row.sweeps = inner.sweeps;
      row.residual = inner.residual;
      row.certificates_ok = inner.certificates_ok();
    } else {
      row.residual = criticality_residual(problem, st.z, st.mu, st.rho);
    }
    cumulative += row.sweeps;
    row.cumulative_sweeps = cumulative;
    row.inner_met_target = row.residual <= st.eps;
    last_met = row.inner_met_target;

    const Vec h = eval_constraints(problem, st.z);
    row.h_inf = constraint_norm(h, ConstraintNorm::Inf);
    row.h_two = constraint_norm(h, ConstraintNorm::Two);
    row.lagrangian = eval_aug_lagrangian(problem, st.z, st.mu, st.rho);
    st.trace.push_back(row);

    st.mu = dual_update(st.mu, st.rho, h);
    st.eps = std::min(st.eps / st.rho, cfg.eps0);
    st.rho = cfg.beta * st.rho;
    st.k = k + 1;
    if (observer) observer(st);

    const double hn = cfg.norm == ConstraintNorm::Inf ? row.h_inf : row.h_two;
    if (cfg.stop_on_eta && hn <= cfg.eta) {
      // feasible; Converged only if the inner solve also certified eps
      out.status = row.inner_met_target ? OuterStatus::Converged : OuterStatus::InnerFailure;
      return out;
    }
  }
  out.status = last_met ? OuterStatus::IterationCap : OuterStatus::InnerFailure;
  return out;
}

struct MultiStartResult {
  OuterResult best;
  std::size_t best_start = 0;
  std::size_t converged = 0;
  double objective = 0.0;
};

/// Runs run_outer from every start and keeps the converged run with the
/// lowest J. If none converges, keeps the run with the smallest final ||H||.
inline MultiStartResult run_multistart(const NlpProblem& problem, const OuterConfig& cfg,
                                       const InnerConfig& inner_cfg,
                                       const std::vector<BlockVector>& starts,
                                       const MultiplierEstimate& mu0) {
  if (starts.empty()) throw PreconditionError("run_multistart: no starting points");
  MultiStartResult out;
  bool have = false;
  double best_h = 0.0;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    OuterResult r = run_outer(problem, cfg, inner_cfg, starts[s], mu0);
    const double j = eval_objective(problem, r.state.z);
    const double h = constraint_norm(eval_constraints(problem, r.state.z), cfg.norm);
    const bool conv = r.status == OuterStatus::Converged;
    if (conv) ++out.converged;
    const bool best_conv = have && out.best.status == OuterStatus::Converged;
    bool take = !have;
    if (have) {
      if (conv && !best_conv) take = true;
      else if (conv && best_conv) take = j < out.objective;
      else if (!conv && !best_conv) take = h < best_h;
    }
    if (take) {
      out.best = std::move(r);
      out.best_start = s;
      out.objective = j;
      best_h = h;
      have = true;
    }
  }
  return out;
}

}  // namespace dalm
