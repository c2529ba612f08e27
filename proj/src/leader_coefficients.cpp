#include "mfsg/leader_coefficients.hpp"

#include <cmath>

namespace mfsg {

namespace {

constexpr double kFdStep = 1e-6;

// Central finite difference of a vector map in one designated argument.
template <typename Fn>
Mat fd_jacobian(const Fn& f, const Vec& at, int out_dim) {
  Mat jac(out_dim, at.size());
  Vec point = at;
  for (int i = 0; i < at.size(); ++i) {
    const double scale = kFdStep * (1.0 + std::abs(at[i]));
    point[i] = at[i] + scale;
    Vec plus = f(point);
    point[i] = at[i] - scale;
    Vec minus = f(point);
    point[i] = at[i];
    jac.col(i) = (plus - minus) / (2.0 * scale);
  }
  return jac;
}

}  // namespace

LeaderCoefficients assemble_leader_coefficients(const GameSpec& spec) {
  spec.validate();
  if (!spec.stationarity.alpha1) {
    throw ConfigError("assemble_leader_coefficients: stationarity map alpha1 is absent");
  }
  if (!spec.follower.b1_ui) {
    throw ConfigError("assemble_leader_coefficients: missing partial callback b1_ui");
  }
  if (!spec.costs.g1_xi) {
    throw ConfigError("assemble_leader_coefficients: missing partial callback g1_xi");
  }

  LeaderCoefficients lc;
  const auto alpha = spec.stationarity.alpha1;
  const auto b1 = spec.follower.b1;
  const auto b1_xi = spec.follower.b1_xi;
  const auto g1_xi = spec.costs.g1_xi;

  lc.B1 = [b1, alpha](double t, const Vec& x1, const Vec& x0, const Vec& u0, const Vec& z,
                      const Vec& p1) {
    return b1(t, x1, alpha(t, x1, x0, u0, z, p1), x0, u0, z);
  };
  lc.Phi = [b1_xi, g1_xi, alpha](double t, const Vec& x1, const Vec& x0, const Vec& u0,
                                 const Vec& z, const Vec& p1) {
    const Vec ui = alpha(t, x1, x0, u0, z, p1);
    return (b1_xi(t, x1, ui, x0, u0, z).transpose() * p1 + g1_xi(t, x1, ui, x0, u0, z)).eval();
  };

  const int n = spec.dims.n;
  auto jac_of = [n](const LeaderCoefficients::Map& map, int arg) {
    return LeaderCoefficients::Jac(
        [map, arg, n](double t, const Vec& x1, const Vec& x0, const Vec& u0, const Vec& z,
                      const Vec& p1) {
          auto slice = [&](const Vec& v) {
            switch (arg) {
              case 0: return map(t, v, x0, u0, z, p1);
              case 1: return map(t, x1, v, u0, z, p1);
              case 2: return map(t, x1, x0, v, z, p1);
              case 3: return map(t, x1, x0, u0, v, p1);
              default: return map(t, x1, x0, u0, z, v);
            }
          };
          const Vec& at = arg == 0 ? x1 : arg == 1 ? x0 : arg == 2 ? u0 : arg == 3 ? z : p1;
          return fd_jacobian(slice, at, n);
        });
  };
  lc.B1_x1 = jac_of(lc.B1, 0);
  lc.B1_x0 = jac_of(lc.B1, 1);
  lc.B1_u0 = jac_of(lc.B1, 2);
  lc.B1_z = jac_of(lc.B1, 3);
  lc.B1_p1 = jac_of(lc.B1, 4);
  lc.Phi_x1 = jac_of(lc.Phi, 0);
  lc.Phi_x0 = jac_of(lc.Phi, 1);
  lc.Phi_u0 = jac_of(lc.Phi, 2);
  lc.Phi_z = jac_of(lc.Phi, 3);
  lc.Phi_p1 = jac_of(lc.Phi, 4);
  return lc;
}

double hamiltonian_leader(const GameSpec& spec, const LeaderCoefficients& lc, double t,
                          const Vec& x1, const Vec& x0, const Vec& u0, const Vec& z, const Vec& p1,
                          const Vec& K0, const Vec& K1, const Vec& phi1) {
  if (!lc.B1 || !lc.Phi) {
    throw ConfigError("hamiltonian_leader: leader coefficients not assembled");
  }
  double value = K1.dot(lc.B1(t, x1, x0, u0, z, p1)) - phi1.dot(lc.Phi(t, x1, x0, u0, z, p1)) +
                 spec.costs.g0(t, x0, u0, z);
  if (spec.dims.k > 0) value += K0.dot(spec.leader.b0(t, x0, u0, z));
  return value;
}

LeaderHamiltonianGradients hamiltonian_leader_gradients(const GameSpec& spec,
                                                        const LeaderCoefficients& lc, double t,
                                                        const Vec& x1, const Vec& x0, const Vec& u0,
                                                        const Vec& z, const Vec& p1, const Vec& K0,
                                                        const Vec& K1, const Vec& phi1) {
  LeaderHamiltonianGradients grads;
  grads.dx1 = lc.B1_x1(t, x1, x0, u0, z, p1).transpose() * K1 -
              lc.Phi_x1(t, x1, x0, u0, z, p1).transpose() * phi1;
  grads.du0 = lc.B1_u0(t, x1, x0, u0, z, p1).transpose() * K1 -
              lc.Phi_u0(t, x1, x0, u0, z, p1).transpose() * phi1 +
              spec.costs.g0_u0(t, x0, u0, z);
  grads.dz = lc.B1_z(t, x1, x0, u0, z, p1).transpose() * K1 -
             lc.Phi_z(t, x1, x0, u0, z, p1).transpose() * phi1 + spec.costs.g0_z(t, x0, u0, z);
  grads.dp1 = lc.B1_p1(t, x1, x0, u0, z, p1).transpose() * K1 -
              lc.Phi_p1(t, x1, x0, u0, z, p1).transpose() * phi1;
  if (spec.dims.k > 0) {
    grads.dx0 = spec.leader.b0_x0(t, x0, u0, z).transpose() * K0 +
                lc.B1_x0(t, x1, x0, u0, z, p1).transpose() * K1 -
                lc.Phi_x0(t, x1, x0, u0, z, p1).transpose() * phi1 +
                spec.costs.g0_x0(t, x0, u0, z);
    grads.du0 += spec.leader.b0_u0(t, x0, u0, z).transpose() * K0;
    grads.dz += spec.leader.b0_z(t, x0, u0, z).transpose() * K0;
  } else {
    grads.dx0 = Vec::Zero(0);
  }
  return grads;
}

}  // namespace mfsg
