#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dalm/core.hpp"
#include "dalm/linalg.hpp"

namespace dalm {

/// The decision variable z partitioned into agent blocks z_1..z_N.
///
/// Storage is a single contiguous vector; blocks are views into it, so
/// flattening is free and unflattening is a copy.
class BlockVector {
 public:
  BlockVector() = default;

  explicit BlockVector(std::vector<Index> dims) : dims_(std::move(dims)) {
    offsets_.reserve(dims_.size());
    Index off = 0;
    for (Index d : dims_) {
      if (d < 0) throw StructuralError("BlockVector: negative block dimension");
      offsets_.push_back(off);
      off += d;
    }
    flat_ = Vec::Zero(off);
  }

  static BlockVector unflatten(std::vector<Index> dims, const Vec& flat) {
    BlockVector out(std::move(dims));
    if (flat.size() != out.total_dim())
      throw StructuralError("BlockVector::unflatten: expected length " +
                            std::to_string(out.total_dim()) + ", got " +
                            std::to_string(flat.size()));
    out.flat_ = flat;
    return out;
  }

  static BlockVector from_blocks(const std::vector<Vec>& blocks) {
    std::vector<Index> dims;
    dims.reserve(blocks.size());
    for (const auto& b : blocks) dims.push_back(b.size());
    BlockVector out(std::move(dims));
    for (std::size_t i = 0; i < blocks.size(); ++i) out.block(i) = blocks[i];
    return out;
  }

  std::size_t num_blocks() const noexcept { return dims_.size(); }
  Index dim(std::size_t i) const { return dims_.at(i); }
  Index offset(std::size_t i) const { return offsets_.at(i); }
  Index total_dim() const noexcept { return flat_.size(); }
  const std::vector<Index>& dims() const noexcept { return dims_; }

  Eigen::VectorBlock<Vec> block(std::size_t i) {
    return flat_.segment(offsets_.at(i), dims_.at(i));
  }
  Eigen::VectorBlock<const Vec> block(std::size_t i) const {
    return flat_.segment(offsets_.at(i), dims_.at(i));
  }

  const Vec& flat() const noexcept { return flat_; }
  Vec& flat() noexcept { return flat_; }

  std::vector<Vec> blocks() const {
    std::vector<Vec> out;
    out.reserve(dims_.size());
    for (std::size_t i = 0; i < dims_.size(); ++i) out.emplace_back(block(i));
    return out;
  }

  bool same_structure(const BlockVector& other) const {
    return dims_ == other.dims_;
  }

 private:
  std::vector<Index> dims_;
  std::vector<Index> offsets_;
  Vec flat_;
};

/// Bounded polytope {x | A x <= b}, optionally carrying a box shortcut.
class Polytope {
 public:
  static constexpr double kDefaultSlack = 1e-12;

  Polytope() = default;

  /// General polytope. Rejects unbounded sets.
  Polytope(Mat A, Vec b) : A_(std::move(A)), b_(std::move(b)) {
    if (A_.rows() != b_.size())
      throw StructuralError("Polytope: A has " + std::to_string(A_.rows()) +
                            " rows but b has length " + std::to_string(b_.size()));
    if (!A_.allFinite() || !b_.allFinite())
      throw PreconditionError("Polytope: non-finite data");
    if (!bounded(A_))
      throw PreconditionError("Polytope: set is unbounded");
  }

  /// Axis-aligned box lower <= x <= upper, stored as [I; -I] x <= [u; -l].
  static Polytope box(const Vec& lower, const Vec& upper) {
    if (lower.size() != upper.size())
      throw StructuralError("Polytope::box: bound length mismatch");
    if (!lower.allFinite() || !upper.allFinite())
      throw PreconditionError("Polytope::box: bounds must be finite");
    if ((lower.array() > upper.array()).any())
      throw PreconditionError("Polytope::box: lower > upper");
    const Index n = lower.size();
    Polytope p;
    p.A_.resize(2 * n, n);
    p.A_ << Mat::Identity(n, n), -Mat::Identity(n, n);
    p.b_.resize(2 * n);
    p.b_ << upper, -lower;
    p.is_box_ = true;
    p.lower_ = lower;
    p.upper_ = upper;
    return p;
  }

  static Polytope box(Index n, double lo, double hi) {
    return box(Vec::Constant(n, lo), Vec::Constant(n, hi));
  }

  Index dim() const noexcept { return A_.cols(); }
  Index rows() const noexcept { return A_.rows(); }
  const Mat& A() const noexcept { return A_; }
  const Vec& b() const noexcept { return b_; }
  bool is_box() const noexcept { return is_box_; }
  const Vec& lower() const noexcept { return lower_; }
  const Vec& upper() const noexcept { return upper_; }

  /// b - A x.
  Vec slacks(const Eigen::Ref<const Vec>& x) const { return b_ - A_ * x; }

  bool contains(const Eigen::Ref<const Vec>& x,
                double slack = kDefaultSlack) const {
    if (x.size() != dim()) return false;
    if (is_box_)
      return ((x - upper_).array() <= slack).all() &&
             ((lower_ - x).array() <= slack).all();
    return (slacks(x).array() >= -slack).all();
  }

  /// Rows with b_j - a_j x <= rel_tol * (1 + |b_j|).
  std::vector<Index> active_rows(const Eigen::Ref<const Vec>& x,
                                 double rel_tol = 1e-8) const {
    std::vector<Index> out;
    const Vec s = slacks(x);
    for (Index j = 0; j < rows(); ++j)
      if (s(j) <= rel_tol * (1.0 + std::abs(b_(j)))) out.push_back(j);
    return out;
  }

  /// Euclidean projection; only available for boxes.
  Vec project_box(const Eigen::Ref<const Vec>& x) const {
    if (!is_box_) throw PreconditionError("Polytope::project_box on a general polytope");
    return x.cwiseMax(lower_).cwiseMin(upper_);
  }

  /// Vertices by enumerating row subsets of size dim(). Small sets only.
  std::vector<Vec> vertices(std::size_t max_subsets = 200000) const {
    const Index n = dim();
    const Index q = rows();
    std::vector<Vec> out;
    if (n == 0) return out;
    double subsets = 1.0;
    for (Index k = 0; k < n; ++k)
      subsets *= static_cast<double>(q - k) / static_cast<double>(k + 1);
    if (subsets > static_cast<double>(max_subsets))
      throw RefusalError("Polytope::vertices: too many row subsets to enumerate");
    std::vector<Index> pick(static_cast<std::size_t>(n));
    std::iota(pick.begin(), pick.end(), Index{0});
    const double scale = 1.0 + b_.cwiseAbs().maxCoeff();
    while (true) {
      Mat As(n, n);
      Vec bs(n);
      for (Index k = 0; k < n; ++k) {
        As.row(k) = A_.row(pick[static_cast<std::size_t>(k)]);
        bs(k) = b_(pick[static_cast<std::size_t>(k)]);
      }
      Eigen::FullPivLU<Mat> lu(As);
      if (lu.rank() == n) {
        Vec v = lu.solve(bs);
        if (contains(v, 1e-9 * scale)) {
          bool dup = false;
          for (const auto& w : out)
            if ((w - v).cwiseAbs().maxCoeff() <= 1e-9 * scale) dup = true;
          if (!dup) out.push_back(std::move(v));
        }
      }
      // next combination
      Index k = n - 1;
      while (k >= 0 && pick[static_cast<std::size_t>(k)] == q - n + k) --k;
      if (k < 0) break;
      ++pick[static_cast<std::size_t>(k)];
      for (Index j = k + 1; j < n; ++j)
        pick[static_cast<std::size_t>(j)] = pick[static_cast<std::size_t>(j - 1)] + 1;
    }
    return out;
  }

  /// Axis-aligned bounding box as (lower, upper).
  std::pair<Vec, Vec> bounding_box() const {
    if (is_box_) return {lower_, upper_};
    const auto verts = vertices();
    if (verts.empty()) throw PreconditionError("Polytope: empty set");
    Vec lo = verts.front(), hi = verts.front();
    for (const auto& v : verts) {
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
    }
    return {lo, hi};
  }

  /// Box midpoint, or the vertex average for general polytopes.
  Vec center() const {
    if (is_box_) return 0.5 * (lower_ + upper_);
    const auto verts = vertices();
    if (verts.empty()) throw PreconditionError("Polytope: empty set");
    Vec c = Vec::Zero(dim());
    for (const auto& v : verts) c += v;
    return c / static_cast<double>(verts.size());
  }

 private:
  // Bounded iff A has full column rank and some lambda > 0 has A^T lambda = 0.
  // Substituting lambda = 1 + y, y >= 0 turns the second test into an NNLS.
  static bool bounded(const Mat& A) {
    const Index n = A.cols();
    if (n == 0) return true;
    if (A.rows() <= n) return false;
    if (numerical_rank(A, 1e-12) < n) return false;
    const Vec ones = Vec::Ones(A.rows());
    const Vec rhs = -(A.transpose() * ones);
    const auto res = nnls(A.transpose(), rhs);
    return res.residual_norm <= 1e-9 * (1.0 + A.norm()) * (1.0 + res.x.norm());
  }

  Mat A_ = Mat(0, 0);
  Vec b_ = Vec(0);
  bool is_box_ = false;
  Vec lower_, upper_;
};

/// One agent: cost J_i, local equality constraints F_i and local polytope Z_i.
struct AgentSpec {
  Index dim = 0;              // n_i
  Index num_constraints = 0;  // m_i
  std::function<double(const Vec&)> cost;
  std::function<Vec(const Vec&)> cost_gradient;
  std::function<Vec(const Vec&)> constraint;           // R^{m_i}
  std::function<Mat(const Vec&)> constraint_jacobian;  // m_i x n_i
  Polytope set;
  /// Optional upper bound on the block Hessian 2-norm, given (rho, |mu|_inf).
  std::function<double(double, double)> hessian_bound_hint;
};

/// Cost coupling Q and constraint coupling G over all blocks.
struct CouplingSpec {
  Index num_constraints = 0;  // p
  std::function<double(const BlockVector&)> cost;
  std::function<Vec(const BlockVector&, std::size_t)> cost_gradient;  // grad_{z_i} Q
  std::function<Vec(const BlockVector&)> constraint;                  // R^p
  std::function<Mat(const BlockVector&, std::size_t)> constraint_jacobian;  // p x n_i
  /// Unordered agent pairs (i, j) such that Q or G depends jointly on z_i, z_j.
  std::vector<std::pair<std::size_t, std::size_t>> edges;
};

/// Multipliers mu = (mu_1, ..., mu_N, mu_G), flattened in the order of H.
class MultiplierEstimate {
 public:
  MultiplierEstimate() = default;

  MultiplierEstimate(std::vector<Index> agent_dims, Index coupling_dim)
      : agent_dims_(std::move(agent_dims)), coupling_dim_(coupling_dim) {
    Index off = 0;
    for (Index d : agent_dims_) {
      offsets_.push_back(off);
      off += d;
    }
    flat_ = Vec::Zero(off + coupling_dim_);
  }

  std::size_t num_agents() const noexcept { return agent_dims_.size(); }
  Index size() const noexcept { return flat_.size(); }
  Index coupling_dim() const noexcept { return coupling_dim_; }
  const std::vector<Index>& agent_dims() const noexcept { return agent_dims_; }

  Eigen::VectorBlock<Vec> agent(std::size_t i) {
    return flat_.segment(offsets_.at(i), agent_dims_.at(i));
  }
  Eigen::VectorBlock<const Vec> agent(std::size_t i) const {
    return flat_.segment(offsets_.at(i), agent_dims_.at(i));
  }
  Eigen::VectorBlock<Vec> coupling() { return flat_.tail(coupling_dim_); }
  Eigen::VectorBlock<const Vec> coupling() const { return flat_.tail(coupling_dim_); }

  const Vec& flat() const noexcept { return flat_; }
  Vec& flat() noexcept { return flat_; }

  void assign(const Vec& flat) {
    if (flat.size() != flat_.size())
      throw StructuralError("MultiplierEstimate: expected length " +
                            std::to_string(flat_.size()) + ", got " +
                            std::to_string(flat.size()));
    flat_ = flat;
  }

 private:
  std::vector<Index> agent_dims_;
  std::vector<Index> offsets_;
  Index coupling_dim_ = 0;
  Vec flat_ = Vec(0);
};

/// Block-structured NLP: min sum J_i(z_i) + Q(z) s.t. F_i(z_i) = 0, G(z) = 0, z_i in Z_i.
///
/// Immutable after construction. Evaluators must be pure, so a problem may be
/// read concurrently.
class NlpProblem {
 public:
  NlpProblem(std::vector<AgentSpec> agents, CouplingSpec coupling)
      : agents_(std::move(agents)), coupling_(std::move(coupling)) {
    if (agents_.empty()) throw StructuralError("NlpProblem: no agents");
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      const auto& a = agents_[i];
      const std::string tag = "NlpProblem: agent " + std::to_string(i);
      if (a.dim <= 0) throw StructuralError(tag + " has non-positive dimension");
      if (a.num_constraints < 0) throw StructuralError(tag + " has negative m_i");
      if (!a.cost || !a.cost_gradient) throw StructuralError(tag + " lacks a cost evaluator");
      if (a.num_constraints > 0 && (!a.constraint || !a.constraint_jacobian))
        throw StructuralError(tag + " lacks a constraint evaluator");
      if (a.set.dim() != a.dim)
        throw StructuralError(tag + " has a polytope of dimension " +
                              std::to_string(a.set.dim()));
      block_dims_.push_back(a.dim);
      constraint_dims_.push_back(a.num_constraints);
      m_ += a.num_constraints;
    }
    if (coupling_.num_constraints < 0) throw StructuralError("NlpProblem: negative p");
    if (coupling_.cost && !coupling_.cost_gradient)
      throw StructuralError("NlpProblem: coupling cost without gradient");
    if (coupling_.num_constraints > 0 &&
        (!coupling_.constraint || !coupling_.constraint_jacobian))
      throw StructuralError("NlpProblem: coupling constraint evaluators missing");
    for (const auto& [i, j] : coupling_.edges)
      if (i >= agents_.size() || j >= agents_.size() || i == j)
        throw StructuralError("NlpProblem: invalid interaction edge (" +
                              std::to_string(i) + ", " + std::to_string(j) + ")");
  }

  std::size_t num_agents() const noexcept { return agents_.size(); }
  const AgentSpec& agent(std::size_t i) const { return agents_.at(i); }
  const std::vector<AgentSpec>& agents() const noexcept { return agents_; }
  const CouplingSpec& coupling() const noexcept { return coupling_; }

  Index total_dim() const noexcept {
    return std::accumulate(block_dims_.begin(), block_dims_.end(), Index{0});
  }
  Index num_agent_constraints() const noexcept { return m_; }  // m
  Index num_coupling_constraints() const noexcept { return coupling_.num_constraints; }  // p
  Index num_constraints() const noexcept { return m_ + coupling_.num_constraints; }  // r

  const std::vector<Index>& block_dims() const noexcept { return block_dims_; }

  BlockVector zeros() const { return BlockVector(block_dims_); }
  MultiplierEstimate zero_multipliers() const {
    return MultiplierEstimate(constraint_dims_, coupling_.num_constraints);
  }

  /// Per-block center of Z_i (box midpoint for boxes).
  BlockVector default_start() const {
    BlockVector z = zeros();
    for (std::size_t i = 0; i < agents_.size(); ++i) z.block(i) = agents_[i].set.center();
    return z;
  }

  void check(const BlockVector& z) const {
    if (z.dims() != block_dims_)
      throw StructuralError("block structure of z does not match the problem");
  }
  void check(const MultiplierEstimate& mu) const {
    if (mu.agent_dims() != constraint_dims_ ||
        mu.coupling_dim() != coupling_.num_constraints)
      throw StructuralError("multiplier partition does not match the problem");
  }

  bool feasible(const BlockVector& z, double slack = 1e-10) const {
    for (std::size_t i = 0; i < agents_.size(); ++i)
      if (!agents_[i].set.contains(z.block(i), slack)) return false;
    return true;
  }

  // Checked evaluator wrappers.

  double cost(std::size_t i, const Vec& zi) const {
    const double v = agents_[i].cost(zi);
    if (!std::isfinite(v)) throw NumericError("non-finite cost of agent " + std::to_string(i), i);
    return v;
  }
  Vec cost_gradient(std::size_t i, const Vec& zi) const {
    Vec g = agents_[i].cost_gradient(zi);
    if (g.size() != agents_[i].dim)
      throw StructuralError("cost gradient of agent " + std::to_string(i) + " has wrong length");
    if (!g.allFinite())
      throw NumericError("non-finite cost gradient of agent " + std::to_string(i), i);
    return g;
  }
  Vec constraint(std::size_t i, const Vec& zi) const {
    const auto& a = agents_[i];
    if (a.num_constraints == 0) return Vec(0);
    Vec f = a.constraint(zi);
    if (f.size() != a.num_constraints)
      throw StructuralError("constraint of agent " + std::to_string(i) + " returned " +
                            std::to_string(f.size()) + " values, expected " +
                            std::to_string(a.num_constraints));
    if (!f.allFinite())
      throw NumericError("non-finite constraint of agent " + std::to_string(i), i);
    return f;
  }
  Mat constraint_jacobian(std::size_t i, const Vec& zi) const {
    const auto& a = agents_[i];
    if (a.num_constraints == 0) return Mat(0, a.dim);
    Mat jac = a.constraint_jacobian(zi);
    if (jac.rows() != a.num_constraints || jac.cols() != a.dim)
      throw StructuralError("constraint Jacobian of agent " + std::to_string(i) +
                            " has wrong shape");
    if (!jac.allFinite())
      throw NumericError("non-finite constraint Jacobian of agent " + std::to_string(i), i);
    return jac;
  }
  double coupling_cost(const BlockVector& z) const {
    if (!coupling_.cost) return 0.0;
    const double v = coupling_.cost(z);
    if (!std::isfinite(v)) throw NumericError("non-finite coupling cost", std::nullopt);
    return v;
  }
  Vec coupling_cost_gradient(const BlockVector& z, std::size_t i) const {
    if (!coupling_.cost) return Vec::Zero(agents_[i].dim);
    Vec g = coupling_.cost_gradient(z, i);
    if (g.size() != agents_[i].dim)
      throw StructuralError("coupling cost gradient has wrong length for block " +
                            std::to_string(i));
    if (!g.allFinite()) throw NumericError("non-finite coupling cost gradient", std::nullopt);
    return g;
  }
  Vec coupling_constraint(const BlockVector& z) const {
    if (coupling_.num_constraints == 0) return Vec(0);
    Vec g = coupling_.constraint(z);
    if (g.size() != coupling_.num_constraints)
      throw StructuralError("coupling constraint returned wrong length");
    if (!g.allFinite()) throw NumericError("non-finite coupling constraint", std::nullopt);
    return g;
  }
  Mat coupling_constraint_jacobian(const BlockVector& z, std::size_t i) const {
    if (coupling_.num_constraints == 0) return Mat(0, agents_[i].dim);
    Mat jac = coupling_.constraint_jacobian(z, i);
    if (jac.rows() != coupling_.num_constraints || jac.cols() != agents_[i].dim)
      throw StructuralError("coupling constraint Jacobian has wrong shape for block " +
                            std::to_string(i));
    if (!jac.allFinite())
      throw NumericError("non-finite coupling constraint Jacobian", std::nullopt);
    return jac;
  }

 private:
  std::vector<AgentSpec> agents_;
  CouplingSpec coupling_;
  std::vector<Index> block_dims_;
  std::vector<Index> constraint_dims_;
  Index m_ = 0;
};

inline void require_positive_rho(double rho) {
  if (!(rho > 0.0) || !std::isfinite(rho))
    throw PreconditionError("penalty parameter rho must be positive and finite");
}

/// H(z) = (F_1(z_1), ..., F_N(z_N), G(z)).
inline Vec eval_constraints(const NlpProblem& problem, const BlockVector& z) {
  problem.check(z);
  Vec h(problem.num_constraints());
  Index off = 0;
  for (std::size_t i = 0; i < problem.num_agents(); ++i) {
    const Vec f = problem.constraint(i, z.block(i));
    h.segment(off, f.size()) = f;
    off += f.size();
  }
  h.tail(problem.num_coupling_constraints()) = problem.coupling_constraint(z);
  return h;
}

/// J(z) = sum J_i(z_i) + Q(z).
inline double eval_objective(const NlpProblem& problem, const BlockVector& z) {
  problem.check(z);
  double v = 0.0;
  for (std::size_t i = 0; i < problem.num_agents(); ++i) v += problem.cost(i, z.block(i));
  return v + problem.coupling_cost(z);
}

/// L_rho(z, mu) = J(z) + mu^T H(z) + rho/2 ||H(z)||^2.
inline double eval_aug_lagrangian(const NlpProblem& problem, const BlockVector& z,
                                  const MultiplierEstimate& mu, double rho) {
  require_positive_rho(rho);
  problem.check(mu);
  const Vec h = eval_constraints(problem, z);
  return eval_objective(problem, z) + mu.flat().dot(h) + 0.5 * rho * h.squaredNorm();
}

/// Value of the block function J_i + Psi_i + Q + S at z; differs from L_rho by
/// terms that do not depend on z_i.
inline double eval_block_objective(const NlpProblem& problem, const BlockVector& z,
                                   const MultiplierEstimate& mu, double rho,
                                   std::size_t i) {
  require_positive_rho(rho);
  problem.check(z);
  problem.check(mu);
  const Vec zi = z.block(i);
  const Vec f = problem.constraint(i, zi);
  const Vec g = problem.coupling_constraint(z);
  return problem.cost(i, zi) + mu.agent(i).dot(f) + 0.5 * rho * f.squaredNorm() +
         problem.coupling_cost(z) + mu.coupling().dot(g) + 0.5 * rho * g.squaredNorm();
}

/// grad_{z_i} L_rho with the other blocks frozen:
/// grad J_i + dF_i^T (mu_i + rho F_i) + grad_i Q + dG_i^T (mu_G + rho G).
inline Vec eval_block_gradient(const NlpProblem& problem, const BlockVector& z,
                               const MultiplierEstimate& mu, double rho,
                               std::size_t i) {
  require_positive_rho(rho);
  problem.check(z);
  problem.check(mu);
  if (i >= problem.num_agents())
    throw PreconditionError("agent index " + std::to_string(i) + " out of range");
  const Vec zi = z.block(i);
  Vec grad = problem.cost_gradient(i, zi);
  if (problem.agent(i).num_constraints > 0) {
    const Vec f = problem.constraint(i, zi);
    grad += problem.constraint_jacobian(i, zi).transpose() * (mu.agent(i) + rho * f);
  }
  grad += problem.coupling_cost_gradient(z, i);
  if (problem.num_coupling_constraints() > 0) {
    const Vec g = problem.coupling_constraint(z);
    grad += problem.coupling_constraint_jacobian(z, i).transpose() * (mu.coupling() + rho * g);
  }
  return grad;
}

/// Full gradient of L_rho, block by block.
inline BlockVector eval_gradient(const NlpProblem& problem, const BlockVector& z,
                                 const MultiplierEstimate& mu, double rho) {
  BlockVector grad = problem.zeros();
  for (std::size_t i = 0; i < problem.num_agents(); ++i)
    grad.block(i) = eval_block_gradient(problem, z, mu, rho, i);
  return grad;
}

/// Jacobian of H (r x n), agent rows block diagonal, coupling rows last.
inline Mat eval_constraint_jacobian(const NlpProblem& problem, const BlockVector& z) {
  problem.check(z);
  Mat jac = Mat::Zero(problem.num_constraints(), problem.total_dim());
  Index row = 0;
  const Index p = problem.num_coupling_constraints();
  for (std::size_t i = 0; i < problem.num_agents(); ++i) {
    const Index mi = problem.agent(i).num_constraints;
    const Index ni = problem.agent(i).dim;
    if (mi > 0) jac.block(row, z.offset(i), mi, ni) = problem.constraint_jacobian(i, z.block(i));
    if (p > 0)
      jac.block(problem.num_agent_constraints(), z.offset(i), p, ni) =
          problem.coupling_constraint_jacobian(z, i);
    row += mi;
  }
  return jac;
}

}  // namespace dalm
