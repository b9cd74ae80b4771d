#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "support.hpp"

using namespace dalm;
using dalm::testing::uniform_vec;

namespace {

/// Two scalar agents with F_i(x) = x - t_i and a scalar coupling G = x_1 + x_2 - s.
NlpProblem two_scalar_agents() {
  std::vector<AgentSpec> agents;
  for (double t : {0.25, -0.5}) {
    AgentSpec a;
    a.dim = 1;
    a.num_constraints = 1;
    a.cost = [](const Vec& x) { return x(0) * x(0); };
    a.cost_gradient = [](const Vec& x) -> Vec { return 2.0 * x; };
    a.constraint = [t](const Vec& x) { return Vec::Constant(1, x(0) - t); };
    a.constraint_jacobian = [](const Vec&) -> Mat { return Mat::Ones(1, 1); };
    a.set = Polytope::box(1, -1.0, 1.0);
    agents.push_back(std::move(a));
  }
  CouplingSpec cs;
  cs.num_constraints = 1;
  cs.constraint = [](const BlockVector& z) -> Vec {
    return Vec::Constant(1, z.flat()(0) + z.flat()(1) - 10.0);
  };
  cs.constraint_jacobian = [](const BlockVector&, std::size_t) -> Mat { return Mat::Ones(1, 1); };
  cs.edges = {{0, 1}};
  return NlpProblem(std::move(agents), std::move(cs));
}

}  // namespace

TEST(BlockVector, FlattenUnflattenRoundTrip) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Index> dims;
    const int nb = 1 + static_cast<int>(rng() % 6);
    for (int k = 0; k < nb; ++k) dims.push_back(static_cast<Index>(rng() % 4));
    BlockVector z(dims);
    z.flat() = uniform_vec(rng, z.total_dim(), -5.0, 5.0);
    const BlockVector back = BlockVector::unflatten(dims, z.flat());
    EXPECT_EQ(back.flat(), z.flat());
    const BlockVector again = BlockVector::from_blocks(z.blocks());
    EXPECT_EQ(again.flat(), z.flat());
    EXPECT_TRUE(again.same_structure(z));
  }
}

TEST(BlockVector, BlockViewsAndOffsets) {
  BlockVector z({2, 0, 3});
  z.block(2) << 1, 2, 3;
  EXPECT_EQ(z.total_dim(), 5);
  EXPECT_EQ(z.offset(2), 2);
  EXPECT_EQ(z.block(1).size(), 0);
  EXPECT_DOUBLE_EQ(z.flat()(4), 3.0);
}

TEST(BlockVector, UnflattenLengthMismatchIsStructural) {
  EXPECT_THROW(BlockVector::unflatten({2, 2}, Vec::Zero(3)), StructuralError);
  EXPECT_THROW(BlockVector({-1}), StructuralError);
}

TEST(Polytope, BoxAndGeneralFormAgreeOnMembership) {
  const Vec lo = (Vec(3) << -1.0, 0.0, 2.0).finished();
  const Vec hi = (Vec(3) << 1.0, 0.5, 3.0).finished();
  const Polytope box = Polytope::box(lo, hi);
  Mat A(6, 3);
  A << Mat::Identity(3, 3), -Mat::Identity(3, 3);
  Vec b(6);
  b << hi, -lo;
  const Polytope general(A, b);
  EXPECT_TRUE(box.is_box());
  EXPECT_FALSE(general.is_box());
  std::mt19937_64 rng(3);
  for (int k = 0; k < 500; ++k) {
    const Vec x = uniform_vec(rng, 3, -2.0, 4.0);
    EXPECT_EQ(box.contains(x), general.contains(x));
  }
  // boundary points and the default slack
  EXPECT_TRUE(box.contains(hi));
  EXPECT_TRUE(general.contains(lo));
  Vec just_out = hi;
  just_out(0) += 1e-13;
  EXPECT_TRUE(box.contains(just_out));
  EXPECT_TRUE(general.contains(just_out));
  just_out(0) += 1e-11;
  EXPECT_FALSE(box.contains(just_out));
  EXPECT_FALSE(general.contains(just_out));
}

TEST(Polytope, RejectsBadInput) {
  Mat A(1, 2);
  A << 1.0, 0.0;
  EXPECT_THROW(Polytope(A, Vec::Ones(1)), PreconditionError);  // unbounded
  EXPECT_THROW(Polytope(Mat::Identity(2, 2), Vec::Ones(3)), StructuralError);
  Mat tri(3, 2);
  tri << -1, 0, 0, -1, 1, 1;
  Vec b(3);
  b << 0, 0, std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(Polytope(tri, b), PreconditionError);
  EXPECT_THROW(Polytope::box(Vec::Ones(2), Vec::Zero(2)), PreconditionError);
  EXPECT_THROW(Polytope::box(Vec::Ones(2), Vec::Ones(3)), StructuralError);
}

TEST(Polytope, TriangleVerticesAndCenter) {
  Mat A(3, 2);
  A << -1, 0, 0, -1, 1, 1;
  const Polytope tri(A, (Vec(3) << 0, 0, 2).finished());
  EXPECT_EQ(tri.vertices().size(), 3u);
  const Vec c = tri.center();
  EXPECT_NEAR(c(0), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(c(1), 2.0 / 3.0, 1e-12);
  const auto active = tri.active_rows((Vec(2) << 0.0, 2.0).finished());
  ASSERT_EQ(active.size(), 2u);
  EXPECT_EQ(active[0], 0);
  EXPECT_EQ(active[1], 2);
  const auto [lo, hi] = tri.bounding_box();
  EXPECT_NEAR(hi(0), 2.0, 1e-12);
  EXPECT_NEAR(lo(1), 0.0, 1e-12);
}

TEST(EvalConstraints, StacksAgentsThenCoupling) {
  const NlpProblem p = two_scalar_agents();
  EXPECT_EQ(p.num_constraints(), 3);
  EXPECT_EQ(p.num_agent_constraints(), 2);
  EXPECT_EQ(p.num_coupling_constraints(), 1);
  BlockVector z = p.zeros();
  z.flat() << 0.5, 0.75;
  const Vec h = eval_constraints(p, z);
  ASSERT_EQ(h.size(), 3);
  EXPECT_DOUBLE_EQ(h(0), 0.25);   // F_1
  EXPECT_DOUBLE_EQ(h(1), 1.25);   // F_2
  EXPECT_DOUBLE_EQ(h(2), -8.75);  // G
}

TEST(EvalConstraints, OneAgentFeasiblePoint) {
  const NlpProblem p = make_one_agent_problem();
  BlockVector z = p.zeros();
  z.flat()(0) = 1.0;
  EXPECT_EQ(eval_constraints(p, z), Vec::Zero(1));
}

TEST(EvalConstraints, ToyPointsOnSphereAreFeasible) {
  ToyParams tp;
  tp.agents = 6;
  tp.seed = 5;
  const ToyProblem toy = generate_toy(tp);
  std::mt19937_64 rng(5);
  BlockVector z = toy.problem.zeros();
  for (std::size_t i = 0; i < z.num_blocks(); ++i) {
    Vec v = uniform_vec(rng, 3, -1.0, 1.0);
    z.block(i) = tp.radius() * v / v.norm();
  }
  const Vec h = eval_constraints(toy.problem, z);
  EXPECT_LE(h.head(6).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(EvalConstraints, WrongStructureThrows) {
  const NlpProblem p = two_scalar_agents();
  EXPECT_THROW(eval_constraints(p, BlockVector({1, 1, 1})), StructuralError);
  EXPECT_THROW(eval_constraints(p, BlockVector({2})), StructuralError);
}

TEST(AugLagrangian, HandArithmetic) {
  const NlpProblem p = make_one_agent_problem();
  BlockVector z = p.zeros();
  MultiplierEstimate mu = p.zero_multipliers();
  mu.flat()(0) = 1.0;
  EXPECT_DOUBLE_EQ(eval_aug_lagrangian(p, z, mu, 2.0), 0.0);
  z.flat()(0) = 1.0;
  mu.flat()(0) = -1.0;
  EXPECT_DOUBLE_EQ(eval_aug_lagrangian(p, z, mu, 10.0), 1.0);
}

TEST(AugLagrangian, PenaltyVanishesAtFeasiblePoints) {
  const NlpProblem p = make_one_agent_problem();
  BlockVector z = p.zeros();
  z.flat()(0) = -1.0;
  std::mt19937_64 rng(2);
  for (int k = 0; k < 20; ++k) {
    MultiplierEstimate mu = p.zero_multipliers();
    mu.flat()(0) = 10.0 * symmetric_uniform(rng);
    const double rho = 0.01 + 100.0 * unit_uniform(rng);
    EXPECT_DOUBLE_EQ(eval_aug_lagrangian(p, z, mu, rho), eval_objective(p, z));
  }
}

TEST(AugLagrangian, LinearInMultipliers) {
  ToyParams tp;
  tp.agents = 5;
  tp.seed = 9;
  const ToyProblem toy = generate_toy(tp);
  std::mt19937_64 rng(9);
  for (int k = 0; k < 20; ++k) {
    auto [z, mu] = random_start(toy, 100 + k);
    MultiplierEstimate delta = toy.problem.zero_multipliers();
    delta.flat() = uniform_vec(rng, delta.size(), -3.0, 3.0);
    MultiplierEstimate shifted = mu;
    shifted.flat() += delta.flat();
    const double rho = 0.5 + unit_uniform(rng);
    const double lhs =
        eval_aug_lagrangian(toy.problem, z, shifted, rho) - eval_aug_lagrangian(toy.problem, z, mu, rho);
    const double rhs = delta.flat().dot(eval_constraints(toy.problem, z));
    EXPECT_NEAR(lhs, rhs, 1e-12 * (1.0 + std::abs(eval_aug_lagrangian(toy.problem, z, mu, rho))));
  }
}

TEST(AugLagrangian, RejectsNonPositiveRho) {
  const NlpProblem p = make_one_agent_problem();
  EXPECT_THROW(eval_aug_lagrangian(p, p.zeros(), p.zero_multipliers(), 0.0), PreconditionError);
  EXPECT_THROW(eval_block_gradient(p, p.zeros(), p.zero_multipliers(), -1.0, 0), PreconditionError);
}

TEST(AugLagrangian, NonFiniteEvaluatorReportsAgent) {
  std::vector<AgentSpec> agents(2);
  for (std::size_t i = 0; i < 2; ++i) {
    agents[i].dim = 1;
    agents[i].cost = [i](const Vec& x) {
      return i == 1 ? std::numeric_limits<double>::infinity() : x(0);
    };
    agents[i].cost_gradient = [](const Vec&) -> Vec { return Vec::Ones(1); };
    agents[i].set = Polytope::box(1, 0.0, 1.0);
  }
  const NlpProblem p(std::move(agents), CouplingSpec{});
  try {
    eval_aug_lagrangian(p, p.zeros(), p.zero_multipliers(), 1.0);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    ASSERT_TRUE(e.agent().has_value());
    EXPECT_EQ(*e.agent(), 1u);
  }
}

TEST(BlockGradient, FeasibleNoCouplingEqualsCostGradient) {
  const NlpProblem p = make_one_agent_problem();
  BlockVector z = p.zeros();
  z.flat()(0) = 1.0;
  const Vec g = eval_block_gradient(p, z, p.zero_multipliers(), 7.0, 0);
  EXPECT_DOUBLE_EQ(g(0), 2.0);
}

TEST(BlockGradient, OneAgentKktStationarity) {
  const NlpProblem p = make_one_agent_problem();
  BlockVector z = p.zeros();
  z.flat()(0) = 1.0;
  MultiplierEstimate mu = p.zero_multipliers();
  mu.flat()(0) = -1.0;
  for (double rho : {0.1, 1.0, 1e3})
    EXPECT_DOUBLE_EQ(eval_block_gradient(p, z, mu, rho, 0)(0), 0.0);
}

TEST(BlockGradient, MatchesFiniteDifferencesOnToy) {
  ToyParams tp;
  tp.agents = 4;
  tp.seed = 21;
  const ToyProblem toy = generate_toy(tp);
  for (std::uint64_t k = 0; k < 10; ++k) {
    auto [z, mu] = random_start(toy, k);
    z.flat() *= 0.9;
    EXPECT_LE(fd_gradient_check(toy.problem, z, mu, 3.0), 1e-6);
  }
}

TEST(BlockGradient, CouplingTermsIncluded) {
  const NlpProblem p = two_scalar_agents();
  BlockVector z = p.zeros();
  z.flat() << 0.5, 0.75;
  MultiplierEstimate mu = p.zero_multipliers();
  mu.flat() << 1.0, 2.0, 3.0;
  const double rho = 2.0;
  // 2x + (mu_1 + rho F_1) + (mu_G + rho G)
  const double expect = 1.0 + (1.0 + 2.0 * 0.25) + (3.0 + 2.0 * -8.75);
  EXPECT_DOUBLE_EQ(eval_block_gradient(p, z, mu, rho, 0)(0), expect);
  EXPECT_THROW(eval_block_gradient(p, z, mu, rho, 2), PreconditionError);
}

TEST(MultiplierEstimate, FlattenOrderMatchesH) {
  MultiplierEstimate mu({2, 1}, 3);
  EXPECT_EQ(mu.size(), 6);
  mu.agent(1)(0) = 7.0;
  mu.coupling()(0) = 9.0;
  EXPECT_DOUBLE_EQ(mu.flat()(2), 7.0);
  EXPECT_DOUBLE_EQ(mu.flat()(3), 9.0);
  EXPECT_THROW(mu.assign(Vec::Zero(5)), StructuralError);
  const NlpProblem p = two_scalar_agents();
  EXPECT_THROW(p.check(MultiplierEstimate({1, 1}, 0)), StructuralError);
}

TEST(NlpProblem, DefaultStartIsBlockCenter) {
  const NlpProblem p = two_scalar_agents();
  EXPECT_EQ(p.default_start().flat(), Vec::Zero(2));
  EXPECT_TRUE(p.feasible(p.default_start()));
}

TEST(NlpProblem, RejectsIncompleteSpecs) {
  AgentSpec a;
  a.dim = 1;
  a.set = Polytope::box(1, 0.0, 1.0);
  EXPECT_THROW(NlpProblem({a}, CouplingSpec{}), StructuralError);  // no cost
  a.cost = [](const Vec&) { return 0.0; };
  a.cost_gradient = [](const Vec&) -> Vec { return Vec::Zero(1); };
  a.num_constraints = 1;
  EXPECT_THROW(NlpProblem({a}, CouplingSpec{}), StructuralError);  // no constraint evaluator
  a.num_constraints = 0;
  a.dim = 2;
  EXPECT_THROW(NlpProblem({a}, CouplingSpec{}), StructuralError);  // set dimension mismatch
}
