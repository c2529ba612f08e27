#pragma once

#include "mfsg/game_spec.hpp"

namespace mfsg {

// Coefficients of the leader's decentralized state system after substituting
// the follower stationarity map: B1 = b1 with ui replaced by alpha1, and
// Phi = (db1/dx1)^T p1 + dg1/dx1 under the same substitution. Partials default
// to central finite differences of the assembled maps; families with closed
// forms overwrite them.
struct LeaderCoefficients {
  using Map = std::function<Vec(double t, const Vec& x1, const Vec& x0, const Vec& u0, const Vec& z,
                                const Vec& p1)>;
  using Jac = std::function<Mat(double, const Vec&, const Vec&, const Vec&, const Vec&,
                                const Vec&)>;

  Map B1;
  Map Phi;
  Jac B1_x1, B1_x0, B1_u0, B1_z, B1_p1;
  Jac Phi_x1, Phi_x0, Phi_u0, Phi_z, Phi_p1;
};

LeaderCoefficients assemble_leader_coefficients(const GameSpec& spec);

// Leader Hamiltonian H0 = <K0, b0> + <K1, B1> - <phi1, Phi> + g0 and its
// partials through the assembled coefficients.
double hamiltonian_leader(const GameSpec& spec, const LeaderCoefficients& lc, double t,
                          const Vec& x1, const Vec& x0, const Vec& u0, const Vec& z, const Vec& p1,
                          const Vec& K0, const Vec& K1, const Vec& phi1);

struct LeaderHamiltonianGradients {
  Vec dx1, dx0, du0, dz, dp1;
};

LeaderHamiltonianGradients hamiltonian_leader_gradients(const GameSpec& spec,
                                                        const LeaderCoefficients& lc, double t,
                                                        const Vec& x1, const Vec& x0, const Vec& u0,
                                                        const Vec& z, const Vec& p1, const Vec& K0,
                                                        const Vec& K1, const Vec& phi1);

}  // namespace mfsg
