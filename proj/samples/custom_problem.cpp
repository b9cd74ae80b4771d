// Two agents on a triangle each, coupled by a consensus constraint x_1 = x_2.
#include <iostream>

#include "dalm/dalm.hpp"

using dalm::Mat;
using dalm::Vec;

int main() {
  Mat a(3, 2);
  a << -1, 0, 0, -1, 1, 1;
  Vec b(3);
  b << 0, 0, 2;
  const dalm::Polytope triangle(a, b);

  std::vector<dalm::AgentSpec> agents;
  for (double target : {0.5, 1.5}) {
    dalm::AgentSpec ag;
    ag.dim = 2;
    ag.num_constraints = 0;
    ag.cost = [target](const Vec& x) { return (x.array() - target).square().sum(); };
    ag.cost_gradient = [target](const Vec& x) -> Vec { return 2.0 * (x.array() - target).matrix(); };
    ag.constraint = [](const Vec&) { return Vec(0); };
    ag.constraint_jacobian = [](const Vec&) { return Mat(0, 2); };
    ag.set = triangle;
    agents.push_back(std::move(ag));
  }

  dalm::CouplingSpec cs;
  cs.num_constraints = 2;
  cs.cost = [](const dalm::BlockVector&) { return 0.0; };
  cs.cost_gradient = [](const dalm::BlockVector& z, std::size_t i) -> Vec {
    return Vec::Zero(z.dim(i));
  };
  cs.constraint = [](const dalm::BlockVector& z) -> Vec { return z.block(0) - z.block(1); };
  cs.constraint_jacobian = [](const dalm::BlockVector&, std::size_t i) -> Mat {
    return (i == 0 ? 1.0 : -1.0) * Mat::Identity(2, 2);
  };
  cs.edges = {{0, 1}};

  const dalm::NlpProblem problem(std::move(agents), std::move(cs));
  dalm::OuterConfig outer;
  outer.eta = 1e-8;
  outer.beta = 2.0;
  outer.max_outer = 60;
  dalm::InnerConfig inner;
  inner.b_strategy = dalm::HessianBand{};
  const auto res = dalm::run_outer(problem, outer, inner, problem.default_start(),
                                   problem.zero_multipliers());
  std::cout << "status: " << dalm::to_string(res.status) << '\n'
            << "x1 = " << res.state.z.block(0).transpose() << '\n'
            << "x2 = " << res.state.z.block(1).transpose() << '\n';
  return res.status == dalm::OuterStatus::Converged ? 0 : 1;
}
