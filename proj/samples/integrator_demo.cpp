// Spin a free rigid body for 10,000 steps and print the drift in angular
// momentum and in the rotation constraint.
#include <cstdio>

#include "physord/integrator.hpp"

using namespace physord;

int main() {
  const VehicleParams p = VehicleParams::make(1.0, Mat3d::diag(0.1, 0.15, 0.2), 0.5, 0.1);
  StateD s;
  s.v = {1.0, 0.0, 0.0};
  s.w = {0.3, 1.5, -0.2};  // near the unstable middle axis
  const std::vector<Action> actions(10000);
  const auto traj = rollout(s, std::span<const Action>(actions), Observation{}, ZeroDynamics{}, p, 10000);
  const Vec3d l0 = s.R * (p.J * s.w);
  for (std::size_t k = 999; k < traj.size(); k += 1000) {
    const auto& t = traj[k];
    std::printf("step %5zu  |dL| %.2e  |R^T R - I| %.2e  w_body (% .3f % .3f % .3f)\n", k + 1,
                norm(t.R * (p.J * t.w) - l0), lie::orthogonality_error(t.R), t.w[0], t.w[1], t.w[2]);
  }
}
