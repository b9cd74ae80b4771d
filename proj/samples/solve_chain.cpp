// Builds a random chain instance and solves it from a seeded start.
#include <iostream>

#include "dalm/dalm.hpp"

int main() {
  dalm::ToyParams params;
  params.agents = 6;
  params.seed = 3;
  const dalm::ToyProblem toy = dalm::generate_toy(params);

  dalm::OuterConfig outer;
  outer.rho0 = 0.1;
  outer.beta = 100.0;
  outer.eta = 1e-6;
  dalm::InnerConfig inner;

  const auto [z0, mu0] = dalm::random_start(toy, params.seed);
  const dalm::OuterResult res = dalm::run_outer(toy.problem, outer, inner, z0, mu0);

  for (const auto& row : res.state.trace)
    std::cout << "k=" << row.k << " rho=" << row.rho << " |H|=" << row.h_inf
              << " residual=" << row.residual << " sweeps=" << row.sweeps << '\n';
  // With B = 30 rho I the inner loop reaches feasibility long before the
  // shrinking stationarity target, so inner_failure is the usual status here.
  const double violation = toy.sphere_violation(res.state.z);
  std::cout << "status: " << dalm::to_string(res.status) << '\n'
            << "sphere violation: " << violation << '\n';
  return violation <= outer.eta ? 0 : 1;
}
