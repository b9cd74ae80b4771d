#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "dalm/core.hpp"
#include "dalm/linalg.hpp"
#include "dalm/model.hpp"
#include "dalm/subqp.hpp"
#include "dalm/verify.hpp"

namespace dalm {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// B_i^l = c * rho * I.
struct FixedScaled {
  double c = 30.0;
};
/// c * rho * I clamped into [(1 + margin) C_i, (2 - margin) C_i] * I.
struct HessianBand {
  double c = 30.0;
  double margin = 1e-3;
};
using BStrategy = std::variant<FixedScaled, HessianBand>;

/// C_i from AgentSpec::hessian_bound_hint.
struct HintBound {};
/// Max finite-difference Hessian 2-norm over `points` samples of Z_i, times `safety`.
struct SampledBound {
  int points = 5;
  double safety = 1.5;
};
/// Sampled initial value, doubled whenever a step fails its certificate.
struct BacktrackingBound {
  SampledBound init{};
  int max_doublings = 60;
};
using CSource = std::variant<HintBound, SampledBound, BacktrackingBound>;

struct AlphaBounds {
  double lower = 1e-3;  // alpha_i^-
  double upper = 1.0;   // alpha_i^+
};

/// Slacks of the per-step certificates.
inline constexpr double kDecreaseSlack = 1e-10;
inline constexpr double kRelErrSlack = 1e-8;
/// Floor applied to curvature estimates.
inline constexpr double kMinCurvature = 1e-12;

struct InnerConfig {
  double tau = 1e-14;  // stop when ||z^{l+1} - z^l||_inf <= tau
  AlphaBounds alpha{};
  std::vector<AlphaBounds> alpha_per_agent;  // overrides `alpha` when non-empty
  /// alpha_i^l for (agent, sweep); defaults to the constant alpha_i^-.
  std::function<double(std::size_t, std::size_t, const AlphaBounds&)> alpha_schedule;
  BStrategy b_strategy = FixedScaled{};
  std::size_t max_sweeps = 500;
  CSource c_source = BacktrackingBound{};
  double qp_tol = 1e-10;
  /// Also stop once the criticality residual reaches this value.
  std::optional<double> target_residual;
  /// Worker threads for same-colour updates; 0 or 1 runs sequentially.
  unsigned threads = 0;
  std::uint64_t sample_seed = 0x5eedULL;

  const AlphaBounds& alpha_for(std::size_t agent) const {
    return alpha_per_agent.empty() ? alpha : alpha_per_agent.at(agent);
  }

  void validate(std::size_t num_agents) const {
    if (!(tau > 0.0)) throw ConfigError("InnerConfig: tau must be positive");
    if (max_sweeps == 0) throw ConfigError("InnerConfig: max_sweeps must be positive");
    if (!(qp_tol > 0.0)) throw ConfigError("InnerConfig: qp_tol must be positive");
    if (!alpha_per_agent.empty() && alpha_per_agent.size() != num_agents)
      throw ConfigError("InnerConfig: alpha_per_agent has wrong length");
    auto check = [](const AlphaBounds& a) {
      if (!(a.lower > 0.0 && a.lower < a.upper))
        throw ConfigError("InnerConfig: alpha bounds must satisfy 0 < alpha- < alpha+");
    };
    check(alpha);
    for (const auto& a : alpha_per_agent) check(a);
    if (const auto* s = std::get_if<SampledBound>(&c_source); s && s->points < 1)
      throw ConfigError("InnerConfig: sampled bound needs at least one point");
    if (const auto* b = std::get_if<BacktrackingBound>(&c_source); b && b->init.points < 1)
      throw ConfigError("InnerConfig: sampled bound needs at least one point");
    if (const auto* h = std::get_if<HessianBand>(&b_strategy);
        h && !(h->margin > 0.0 && h->margin < 0.5))
      throw ConfigError("InnerConfig: HessianBand margin must lie in (0, 0.5)");
  }
};

// ---------------------------------------------------------------------------
// Certificates
// ---------------------------------------------------------------------------

struct AgentCertificate {
  double decrease_lhs = 0.0;   // Phi_i(z_i^{l+1}) + alpha/2 ||dz||^2
  double decrease_rhs = 0.0;   // Phi_i(z_i^l)
  double rel_err_lhs = 0.0;    // ||v_i + grad_i (Q + S)||
  double rel_err_bound = 0.0;  // (3 C_i + alpha_i^+) ||dz||
  double step_norm = 0.0;      // ||z_i^{l+1} - z_i^l||_2
  double c_used = 0.0;         // C_i
  double b_scale = 0.0;        // B_i^l = b_scale * I
  double alpha = 0.0;          // alpha_i^l
  int retries = 0;             // C_i doublings in this step

  bool decrease_ok() const { return decrease_lhs <= decrease_rhs + kDecreaseSlack; }
  bool rel_err_ok() const { return rel_err_lhs <= rel_err_bound + kRelErrSlack; }
  bool passes() const { return decrease_ok() && rel_err_ok(); }
};

struct SweepCertificate {
  std::size_t sweep = 0;
  std::vector<AgentCertificate> agents;
  double step_inf = 0.0;           // ||z^{l+1} - z^l||_inf
  double lagrangian_before = 0.0;  // L_rho(z^l)
  double lagrangian_after = 0.0;   // L_rho(z^{l+1})

  bool passes() const {
    return std::all_of(agents.begin(), agents.end(),
                       [](const AgentCertificate& a) { return a.passes(); });
  }
};

// ---------------------------------------------------------------------------
// Colouring
// ---------------------------------------------------------------------------

struct Coloring {
  std::vector<std::size_t> color;  // colour per agent
  std::size_t num_colors = 0;

  /// Agents grouped by colour, ascending within each class.
  std::vector<std::vector<std::size_t>> classes() const {
    std::vector<std::vector<std::size_t>> out(num_colors);
    for (std::size_t i = 0; i < color.size(); ++i) out[color[i]].push_back(i);
    return out;
  }
};

/// Greedy colouring of the interaction graph in agent order.
inline Coloring color_interaction_graph(const CouplingSpec& coupling, std::size_t num_agents) {
  std::vector<std::vector<std::size_t>> adj(num_agents);
  for (const auto& [i, j] : coupling.edges) {
    if (i >= num_agents || j >= num_agents)
      throw StructuralError("color_interaction_graph: edge references unknown agent");
    if (i == j) continue;
    adj[i].push_back(j);
    adj[j].push_back(i);
  }
  Coloring out;
  out.color.assign(num_agents, 0);
  std::vector<bool> used;
  for (std::size_t i = 0; i < num_agents; ++i) {
    used.assign(num_agents + 1, false);
    for (std::size_t j : adj[i])
      if (j < i) used[out.color[j]] = true;
    std::size_t c = 0;
    while (used[c]) ++c;
    out.color[i] = c;
    out.num_colors = std::max(out.num_colors, c + 1);
  }
  return out;
}

/// Update schedule of one sweep: classes run in order; agents inside a class
/// read the same snapshot. Classes must not contain interacting agents.
using UpdateSchedule = std::vector<std::vector<std::size_t>>;

/// Plain Gauss-Seidel order: one agent per class.
inline UpdateSchedule sequential_schedule(const std::vector<std::size_t>& order) {
  UpdateSchedule s;
  for (std::size_t i : order) s.push_back({i});
  return s;
}

inline UpdateSchedule sequential_schedule(std::size_t num_agents) {
  UpdateSchedule s;
  for (std::size_t i = 0; i < num_agents; ++i) s.push_back({i});
  return s;
}

// ---------------------------------------------------------------------------
// Hessian bound
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<Vec> sample_points(const Polytope& set, const Vec& start, int count,
                                      std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Vec> pts;
  if (set.is_box()) {
    for (int k = 0; k < count; ++k) {
      Vec x(set.dim());
      for (Index j = 0; j < x.size(); ++j)
        x(j) = set.lower()(j) + unit(rng) * (set.upper()(j) - set.lower()(j));
      pts.push_back(std::move(x));
    }
    return pts;
  }
  // hit-and-run from the current block value
  std::normal_distribution<double> normal;
  Vec x = start;
  for (int k = 0; k < count; ++k) {
    Vec d(set.dim());
    for (Index j = 0; j < d.size(); ++j) d(j) = normal(rng);
    const Vec ad = set.A() * d;
    const Vec s = set.slacks(x);
    double tmax = std::numeric_limits<double>::infinity();
    double tmin = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < ad.size(); ++j) {
      if (ad(j) > 0) tmax = std::min(tmax, std::max(s(j), 0.0) / ad(j));
      if (ad(j) < 0) tmin = std::max(tmin, std::max(s(j), 0.0) / ad(j));
    }
    if (std::isfinite(tmax) && std::isfinite(tmin)) x = x + (tmin + unit(rng) * (tmax - tmin)) * d;
    pts.push_back(x);
  }
  return pts;
}

inline double fd_block_hessian_norm(const NlpProblem& problem, BlockVector z,
                                    const MultiplierEstimate& mu, double rho, std::size_t i,
                                    const Vec& at) {
  const Index n = at.size();
  Mat hess(n, n);
  z.block(i) = at;
  for (Index k = 0; k < n; ++k) {
    const Index idx = z.offset(i) + k;
    const double h = 1e-5 * std::max(1.0, std::abs(at(k)));
    z.flat()(idx) = at(k) + h;
    const Vec gp = eval_block_gradient(problem, z, mu, rho, i);
    z.flat()(idx) = at(k) - h;
    const Vec gm = eval_block_gradient(problem, z, mu, rho, i);
    z.flat()(idx) = at(k);
    hess.col(k) = (gp - gm) / (2.0 * h);
  }
  const Mat sym = 0.5 * (hess + hess.transpose());
  return symmetric_norm2(sym);
}

inline double sampled_bound(const NlpProblem& problem, const BlockVector& z,
                            const MultiplierEstimate& mu, double rho, std::size_t i,
                            const SampledBound& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed + 0x9E3779B97F4A7C15ULL * (i + 1));
  const auto pts = sample_points(problem.agent(i).set, z.block(i), cfg.points, rng);
  double worst = 0.0;
  for (const auto& p : pts)
    worst = std::max(worst, fd_block_hessian_norm(problem, z, mu, rho, i, p));
  return std::max(cfg.safety * worst, kMinCurvature);
}

}  // namespace detail

/// Initial C_i for agent i: an estimate of max ||grad^2 L_i^l||_2 over Z_i with
/// the other blocks frozen at z.
inline double estimate_hessian_bound(const NlpProblem& problem, const BlockVector& z,
                                     std::size_t i, const InnerConfig& cfg, double rho,
                                     const MultiplierEstimate& mu) {
  require_positive_rho(rho);
  problem.check(z);
  if (i >= problem.num_agents())
    throw PreconditionError("estimate_hessian_bound: agent index out of range");
  if (std::holds_alternative<HintBound>(cfg.c_source)) {
    const auto& hint = problem.agent(i).hessian_bound_hint;
    if (!hint)
      throw ConfigError("estimate_hessian_bound: agent " + std::to_string(i) +
                        " has no Hessian bound hint");
    const double mu_inf = mu.size() ? mu.flat().cwiseAbs().maxCoeff() : 0.0;
    return std::max(hint(rho, mu_inf), kMinCurvature);
  }
  const SampledBound sb = std::holds_alternative<SampledBound>(cfg.c_source)
                              ? std::get<SampledBound>(cfg.c_source)
                              : std::get<BacktrackingBound>(cfg.c_source).init;
  return detail::sampled_bound(problem, z, mu, rho, i, sb, cfg.sample_seed);
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

/// Per-call state carried across sweeps: current C_i values and sweep counter.
struct InnerState {
  std::vector<double> c;
  std::size_t sweep = 0;
};

inline InnerState init_inner_state(const NlpProblem& problem, const BlockVector& z,
                                   const MultiplierEstimate& mu, double rho,
                                   const InnerConfig& cfg) {
  InnerState st;
  st.c.reserve(problem.num_agents());
  for (std::size_t i = 0; i < problem.num_agents(); ++i)
    st.c.push_back(estimate_hessian_bound(problem, z, i, cfg, rho, mu));
  return st;
}

namespace detail {

inline double b_scale(const BStrategy& strategy, double rho, double c) {
  if (const auto* f = std::get_if<FixedScaled>(&strategy)) return f->c * rho;
  const auto& h = std::get<HessianBand>(strategy);
  return std::clamp(h.c * rho, (1.0 + h.margin) * c, (2.0 - h.margin) * c);
}

// One block update. Reads `snapshot`, returns the new block and its certificate.
inline Vec update_block(const NlpProblem& problem, const BlockVector& snapshot,
                        const MultiplierEstimate& mu, double rho, const InnerConfig& cfg,
                        std::size_t i, std::size_t sweep, double& c,
                        AgentCertificate& cert) {
  const Polytope& set = problem.agent(i).set;
  const AlphaBounds& bounds = cfg.alpha_for(i);
  const double alpha = cfg.alpha_schedule ? cfg.alpha_schedule(i, sweep, bounds) : bounds.lower;
  if (!(alpha >= bounds.lower && alpha <= bounds.upper))
    throw ConfigError("alpha schedule left [alpha-, alpha+] for agent " + std::to_string(i));

  const Vec zi = snapshot.block(i);
  const Vec grad = eval_block_gradient(problem, snapshot, mu, rho, i);
  const double phi_old = eval_block_objective(problem, snapshot, mu, rho, i);
  const auto* backtrack = std::get_if<BacktrackingBound>(&cfg.c_source);
  BlockVector trial = snapshot;

  Vec next;
  double last_b = -1.0;
  for (int retry = 0;; ++retry) {
    const double b = b_scale(cfg.b_strategy, rho, c);
    if (b != last_b) {
      try {
        const ProxQp qp(grad, b + alpha, zi, set);
        next = solve_prox_qp(qp, cfg.qp_tol).minimizer;
      } catch (const ConvergenceError& e) {
        throw ConvergenceError(std::string(e.what()) + " (agent " + std::to_string(i) +
                                   ", sweep " + std::to_string(sweep) + ")",
                               e.best_iterate(), e.residual());
      } catch (const PreconditionError& e) {
        throw PreconditionError(std::string(e.what()) + " (agent " + std::to_string(i) +
                                ", sweep " + std::to_string(sweep) + ")");
      }
      last_b = b;
    }
    const Vec step = next - zi;
    trial.block(i) = next;
    const double phi_new = eval_block_objective(problem, trial, mu, rho, i);
    const Vec grad_new = eval_block_gradient(problem, trial, mu, rho, i);

    cert.step_norm = step.norm();
    cert.decrease_lhs = phi_new + 0.5 * alpha * step.squaredNorm();
    cert.decrease_rhs = phi_old;
    cert.rel_err_lhs = (grad_new - grad - (b + alpha) * step).norm();
    cert.rel_err_bound = (3.0 * c + bounds.upper) * cert.step_norm;
    cert.c_used = c;
    cert.b_scale = b;
    cert.alpha = alpha;
    cert.retries = retry;
    if (cert.passes() || !backtrack || retry >= backtrack->max_doublings) break;
    c *= 2.0;
  }
  return next;
}

}  // namespace detail

/// One Gauss-Seidel sweep over `schedule`. Agents inside a class read the same
/// snapshot and may run on `cfg.threads` workers.
inline std::pair<BlockVector, SweepCertificate> bcd_sweep(
    const NlpProblem& problem, const BlockVector& z, const MultiplierEstimate& mu, double rho,
    const InnerConfig& cfg, const UpdateSchedule& schedule, InnerState& state) {
  require_positive_rho(rho);
  problem.check(z);
  problem.check(mu);
  if (state.c.size() != problem.num_agents())
    throw PreconditionError("bcd_sweep: inner state does not match the problem");
  if (!problem.feasible(z, 1e-10)) throw PreconditionError("bcd_sweep: z is outside Z");

  SweepCertificate cert;
  cert.sweep = state.sweep;
  cert.agents.resize(problem.num_agents());
  cert.lagrangian_before = eval_aug_lagrangian(problem, z, mu, rho);

  BlockVector current = z;
  std::vector<bool> seen(problem.num_agents(), false);
  for (const auto& cls : schedule) {
    for (std::size_t i : cls) {
      if (i >= problem.num_agents() || seen[i])
        throw PreconditionError("bcd_sweep: schedule must list every agent exactly once");
      seen[i] = true;
    }
    const BlockVector snapshot = current;
    const unsigned workers =
        std::min<unsigned>(cfg.threads, static_cast<unsigned>(cls.size()));
    if (workers <= 1) {
      for (std::size_t i : cls)
        current.block(i) = detail::update_block(problem, snapshot, mu, rho, cfg, i, state.sweep,
                                                state.c[i], cert.agents[i]);
    } else {
      std::vector<std::exception_ptr> errors(workers);
      std::vector<Vec> results(cls.size());
      {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) {
          pool.emplace_back([&, w] {
            try {
              for (std::size_t k = w; k < cls.size(); k += workers) {
                const std::size_t i = cls[k];
                results[k] = detail::update_block(problem, snapshot, mu, rho, cfg, i,
                                                  state.sweep, state.c[i], cert.agents[i]);
              }
            } catch (...) {
              errors[w] = std::current_exception();
            }
          });
        }
      }
      for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
      for (std::size_t k = 0; k < cls.size(); ++k) current.block(cls[k]) = results[k];
    }
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i]) throw PreconditionError("bcd_sweep: schedule must list every agent exactly once");

  cert.step_inf = z.total_dim() ? (current.flat() - z.flat()).cwiseAbs().maxCoeff() : 0.0;
  cert.lagrangian_after = eval_aug_lagrangian(problem, current, mu, rho);
  ++state.sweep;
  return {std::move(current), std::move(cert)};
}

/// Convenience overload: sequential agent order, fresh C_i estimates.
inline std::pair<BlockVector, SweepCertificate> bcd_sweep(const NlpProblem& problem,
                                                          const BlockVector& z,
                                                          const MultiplierEstimate& mu,
                                                          double rho, const InnerConfig& cfg) {
  cfg.validate(problem.num_agents());
  InnerState st = init_inner_state(problem, z, mu, rho, cfg);
  return bcd_sweep(problem, z, mu, rho, cfg, sequential_schedule(problem.num_agents()), st);
}

// ---------------------------------------------------------------------------
// Inner loop
// ---------------------------------------------------------------------------

enum class InnerStop { StepBelowTau, TargetReached, SweepCap };

struct InnerResult {
  BlockVector z;
  std::size_t sweeps = 0;
  std::vector<SweepCertificate> trace;
  InnerStop stop = InnerStop::SweepCap;
  double residual = 0.0;  // criticality residual at z (computed when a target is set)

  bool soft_failure() const { return stop == InnerStop::SweepCap; }
  bool certificates_ok() const {
    return std::all_of(trace.begin(), trace.end(),
                       [](const SweepCertificate& s) { return s.passes(); });
  }
};

/// Inexact proximal BCD on L_rho(., mu) over Z. Stops when a sweep moves
/// less than tau in sup-norm, when the criticality residual reaches
/// cfg.target_residual, or after cfg.max_sweeps sweeps (soft failure).
inline InnerResult run_inner(const NlpProblem& problem, const BlockVector& z0,
                             const MultiplierEstimate& mu, double rho, const InnerConfig& cfg,
                             const std::optional<UpdateSchedule>& schedule = std::nullopt) {
  cfg.validate(problem.num_agents());
  require_positive_rho(rho);
  problem.check(z0);
  if (!problem.feasible(z0, 1e-10)) throw PreconditionError("run_inner: z0 is outside Z");
  const UpdateSchedule sched =
      schedule ? *schedule
               : color_interaction_graph(problem.coupling(), problem.num_agents()).classes();

  InnerResult res;
  res.z = z0;
  if (cfg.target_residual) {
    res.residual = criticality_residual(problem, res.z, mu, rho);
    if (res.residual <= *cfg.target_residual) {
      res.stop = InnerStop::TargetReached;
      return res;
    }
  }
  InnerState state = init_inner_state(problem, z0, mu, rho, cfg);
  while (res.sweeps < cfg.max_sweeps) {
    auto [next, cert] = bcd_sweep(problem, res.z, mu, rho, cfg, sched, state);
    res.z = std::move(next);
    ++res.sweeps;
    const double step = cert.step_inf;
    res.trace.push_back(std::move(cert));
    if (cfg.target_residual) {
      res.residual = criticality_residual(problem, res.z, mu, rho);
      if (res.residual <= *cfg.target_residual) {
        res.stop = InnerStop::TargetReached;
        return res;
      }
    }
    if (step <= cfg.tau) {
      res.stop = InnerStop::StepBelowTau;
      return res;
    }
  }
  res.stop = InnerStop::SweepCap;
  return res;
}

}  // namespace dalm
