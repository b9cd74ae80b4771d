#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace dalm;
using dalm::testing::linear_problem;
using dalm::testing::quadratic_problem;
using dalm::testing::random_spd;
using dalm::testing::uniform_vec;

namespace {

double residual_at(const Vec& g, const Polytope& set, const Vec& x) {
  const NlpProblem p = linear_problem(g, set);
  BlockVector z = p.zeros();
  z.flat() = x;
  return criticality_residual(p, z, p.zero_multipliers(), 1.0);
}

Polytope box_as_general(const Vec& lo, const Vec& hi) {
  const Index n = lo.size();
  Mat A(2 * n, n);
  A << Mat::Identity(n, n), -Mat::Identity(n, n);
  Vec b(2 * n);
  b << hi, -lo;
  return Polytope(A, b);
}

}  // namespace

TEST(CriticalityResidual, InteriorIsGradientNorm) {
  const Polytope box = Polytope::box(3, -2.0, 2.0);
  const Vec g = (Vec(3) << 1.0, -2.0, 2.0).finished();
  EXPECT_NEAR(residual_at(g, box, Vec::Zero(3)), 3.0, 1e-12);
}

TEST(CriticalityResidual, ScalarBoxActiveBound) {
  const Polytope box = Polytope::box(1, -2.0, 2.0);
  const Vec x = Vec::Constant(1, 2.0);
  EXPECT_NEAR(residual_at(Vec::Constant(1, -3.0), box, x), 0.0, 1e-12);
  EXPECT_NEAR(residual_at(Vec::Constant(1, 3.0), box, x), 3.0, 1e-12);
  EXPECT_NEAR(residual_at(Vec::Constant(1, 3.0), box, -x), 0.0, 1e-12);
  EXPECT_NEAR(residual_at(Vec::Constant(1, -3.0), box, -x), 3.0, 1e-12);
}

TEST(CriticalityResidual, BoxClosedFormMatchesNnls) {
  std::mt19937_64 rng(8);
  const Vec lo = Vec::Constant(3, -1.0), hi = Vec::Constant(3, 2.0);
  const Polytope box = Polytope::box(lo, hi);
  const Polytope general = box_as_general(lo, hi);
  for (int trial = 0; trial < 200; ++trial) {
    Vec x = uniform_vec(rng, 3, -1.0, 2.0);
    for (Index k = 0; k < 3; ++k) {
      const auto r = rng() % 3;
      if (r == 0) x(k) = -1.0;
      if (r == 1) x(k) = 2.0;
    }
    const Vec g = uniform_vec(rng, 3, -5.0, 5.0);
    EXPECT_NEAR(residual_at(g, box, x), residual_at(g, general, x), 1e-10);
  }
}

TEST(CriticalityResidual, ActivatingConstraintsNeverIncreasesDistance) {
  std::mt19937_64 rng(31);
  Mat A(4, 2);
  A << -1, 0, 0, -1, 1, 2, 2, 1;
  const Polytope set(A, (Vec(4) << 0, 0, 4, 4).finished());
  const auto verts = set.vertices();
  for (int trial = 0; trial < 200; ++trial) {
    const Vec g = uniform_vec(rng, 2, -5.0, 5.0);
    const Vec& v = verts[rng() % verts.size()];
    EXPECT_LE(block_criticality_residual(set, v, g), g.norm() + 1e-12);
  }
}

TEST(CriticalityResidual, ZeroAtOneAgentKktPoint) {
  const NlpProblem p = make_one_agent_problem();
  BlockVector z = p.zeros();
  z.flat()(0) = 1.0;
  MultiplierEstimate mu = p.zero_multipliers();
  mu.flat()(0) = -1.0;
  for (double rho : {0.1, 1.0, 100.0}) EXPECT_LE(criticality_residual(p, z, mu, rho), 1e-10);
}

TEST(CriticalityResidual, OutsideSetThrows) {
  const Polytope box = Polytope::box(1, -2.0, 2.0);
  EXPECT_THROW(residual_at(Vec::Ones(1), box, Vec::Constant(1, 2.1)), PreconditionError);
}

TEST(KktReport, MultipliersNonNegativeAndComplementary) {
  Mat A(3, 2);
  A << -1, 0, 0, -1, 1, 1;
  const Polytope tri(A, (Vec(3) << 0, 0, 2).finished());
  const NlpProblem p = linear_problem((Vec(2) << -1.0, -2.0).finished(), tri);
  BlockVector z = p.zeros();
  z.flat() << 0.0, 2.0;
  const KktReport rep = kkt_report(p, z, p.zero_multipliers(), 1.0);
  ASSERT_EQ(rep.active.size(), 2u);
  EXPECT_EQ(rep.active[0], 0);
  EXPECT_EQ(rep.active[1], 2);
  for (Index k = 0; k < rep.lambda.size(); ++k) EXPECT_GE(rep.lambda(k), -1e-12);
  // -g = (1, 2) = lambda_0 (-1, 0) + lambda_2 (1, 1) -> lambda = (1, 2)
  EXPECT_NEAR(rep.lambda(0), 1.0, 1e-12);
  EXPECT_NEAR(rep.lambda(1), 2.0, 1e-12);
  EXPECT_NEAR(rep.stationarity, 0.0, 1e-12);
  EXPECT_TRUE(rep.regular);  // no equality constraints
}

TEST(FdGradientCheck, QuadraticIsNearExact) {
  std::mt19937_64 rng(3);
  const NlpProblem p = quadratic_problem(random_spd(rng, 3, 0.5), -1.0, 1.0);
  BlockVector z = p.zeros();
  z.flat() = uniform_vec(rng, 3, -0.5, 0.5);
  EXPECT_LE(fd_gradient_check(p, z, p.zero_multipliers(), 1.0, 1e-5), 1e-7);
}

TEST(FdGradientCheck, ToyInstance) {
  ToyParams tp;
  tp.agents = 5;
  tp.seed = 12;
  const ToyProblem toy = generate_toy(tp);
  for (std::uint64_t k = 0; k < 5; ++k) {
    auto [z, mu] = random_start(toy, k);
    z.flat() *= 0.95;
    EXPECT_LE(fd_gradient_check(toy.problem, z, mu, 1.0), 1e-5);
  }
}

TEST(FdGradientCheck, LinearCostIsExact) {
  const NlpProblem p = linear_problem((Vec(2) << 3.0, -7.0).finished(), Polytope::box(2, -1.0, 1.0));
  BlockVector z = p.zeros();
  z.flat() << 0.3, -0.2;
  EXPECT_LE(fd_gradient_check(p, z, p.zero_multipliers(), 1.0), 1e-10);
}

TEST(FdGradientCheck, MarginViolationThrows) {
  const NlpProblem p = linear_problem(Vec::Ones(1), Polytope::box(1, -1.0, 1.0));
  BlockVector z = p.zeros();
  z.flat()(0) = 1.0 - 1e-9;
  EXPECT_THROW(fd_gradient_check(p, z, p.zero_multipliers(), 1.0, 1e-6), PreconditionError);
  z.flat()(0) = 0.0;
  EXPECT_THROW(fd_gradient_check(p, z, p.zero_multipliers(), 1.0, 0.0), PreconditionError);
}

TEST(BruteForce, OneAgentConstrained) {
  const NlpProblem p = make_one_agent_problem();
  const BruteForceResult r = brute_force_min(p, 1e-3);
  EXPECT_NEAR(std::abs(r.z_best.flat()(0)), 1.0, 1e-3);
  EXPECT_NEAR(r.value, 1.0, 1e-2);
  EXPECT_LE(r.feasibility, 1e-2);
}

TEST(BruteForce, ConvexBoxQpMatchesSubqp) {
  std::mt19937_64 rng(41);
  const Mat P = random_spd(rng, 2, 0.5);
  const Vec q = uniform_vec(rng, 2, -3.0, 3.0);
  AgentSpec a;
  a.dim = 2;
  a.cost = [P, q](const Vec& x) { return 0.5 * x.dot(P * x) + q.dot(x); };
  a.cost_gradient = [P, q](const Vec& x) -> Vec { return P * x + q; };
  a.set = Polytope::box(2, -1.0, 1.0);
  const NlpProblem p({a}, CouplingSpec{});
  const BruteForceResult r = brute_force_min(p, 1e-3);
  // the same problem as a ProxQp centred at 0: g = q, M = P
  const Polytope box = Polytope::box(2, -1.0, 1.0);
  const QpSolution s = solve_prox_qp(ProxQp(q, P, Vec::Zero(2), box));
  EXPECT_NEAR(r.value, a.cost(s.minimizer), 1e-3);
}

TEST(BruteForce, AugLagrangianMode) {
  const NlpProblem p = make_one_agent_problem();
  AugLagrangianGrid al{p.zero_multipliers(), 10.0};
  al.mu.flat()(0) = -1.0;
  const BruteForceResult r = brute_force_min(p, 1e-3, al);
  EXPECT_NEAR(std::abs(r.z_best.flat()(0)), 1.0, 2e-3);
  EXPECT_NEAR(r.value, 1.0, 1e-4);
}

TEST(BruteForce, Refusals) {
  AgentSpec a;
  a.dim = 1;
  a.num_constraints = 1;
  a.cost = [](const Vec& x) { return x(0); };
  a.cost_gradient = [](const Vec&) -> Vec { return Vec::Ones(1); };
  a.constraint = [](const Vec& x) { return Vec::Constant(1, x(0) * x(0) + 5.0); };
  a.constraint_jacobian = [](const Vec& x) -> Mat { return Mat::Constant(1, 1, 2.0 * x(0)); };
  a.set = Polytope::box(1, -1.0, 1.0);
  const NlpProblem empty_band({a}, CouplingSpec{});
  EXPECT_THROW(brute_force_min(empty_band, 1e-3), RefusalError);

  ToyParams tp;
  tp.agents = 5;
  tp.dim = 1;
  EXPECT_THROW(brute_force_min(generate_toy(tp).problem, 1e-2), RefusalError);
}

TEST(Regularity, OneAgent) {
  const NlpProblem p = make_one_agent_problem();
  BlockVector z = p.zeros();
  z.flat()(0) = 1.0;
  EXPECT_TRUE(regularity_check(p, z));
  z.flat()(0) = 0.0;
  EXPECT_FALSE(regularity_check(p, z));
}

TEST(Regularity, ToyFeasiblePoint) {
  ToyParams tp;
  tp.agents = 8;
  tp.seed = 4;
  const ToyProblem toy = generate_toy(tp);
  std::mt19937_64 rng(4);
  BlockVector z = toy.problem.zeros();
  for (std::size_t i = 0; i < 8; ++i) {
    const Vec v = uniform_vec(rng, 3, -1.0, 1.0);
    z.block(i) = tp.radius() * v / v.norm();
  }
  EXPECT_TRUE(regularity_check(toy.problem, z));
}

TEST(Regularity, MoreConstraintsThanVariables) {
  AgentSpec a;
  a.dim = 1;
  a.num_constraints = 2;
  a.cost = [](const Vec&) { return 0.0; };
  a.cost_gradient = [](const Vec&) -> Vec { return Vec::Zero(1); };
  a.constraint = [](const Vec& x) { return Vec::Constant(2, x(0)); };
  a.constraint_jacobian = [](const Vec&) -> Mat { return Mat::Ones(2, 1); };
  a.set = Polytope::box(1, -1.0, 1.0);
  const NlpProblem p({a}, CouplingSpec{});
  std::string diag;
  EXPECT_FALSE(regularity_check(p, p.zeros(), 1e-8, &diag));
  EXPECT_FALSE(diag.empty());
}

TEST(Regularity, InvariantUnderScalingH) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    // two linear constraints on R^3, sometimes dependent
    Mat J = Mat::Zero(2, 3);
    for (Index k = 0; k < 6; ++k) J(k) = symmetric_uniform(rng);
    if (trial % 3 == 0) J.row(1) = 2.0 * J.row(0);
    bool first = true, baseline = false;
    for (double c : {1.0, 1e-3, 1e4}) {
      AgentSpec a;
      a.dim = 3;
      a.num_constraints = 2;
      a.cost = [](const Vec&) { return 0.0; };
      a.cost_gradient = [](const Vec&) -> Vec { return Vec::Zero(3); };
      a.constraint = [J, c](const Vec& x) -> Vec { return c * (J * x); };
      a.constraint_jacobian = [J, c](const Vec&) -> Mat { return c * J; };
      a.set = Polytope::box(3, -1.0, 1.0);
      const NlpProblem p({a}, CouplingSpec{});
      const bool reg = regularity_check(p, p.zeros());
      if (first) baseline = reg;
      EXPECT_EQ(reg, baseline);
      first = false;
    }
    if (trial % 3 == 0) EXPECT_FALSE(baseline);
  }
}
