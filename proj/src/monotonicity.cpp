#include "mfsg/monotonicity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mfsg {

namespace {

constexpr double kDenomFloor = 1e-14;

struct ProcessPair {
  FbsdeSolution a;
  FbsdeSolution b;
};

ProcessPair sample_pair(const FbsdeProblem& problem, const EnsembleNoise& noise,
                        const TimeGrid& grid, const RngSpec& rng, std::uint64_t index,
                        double scale) {
  RngSpec derived;
  derived.seed = rng.stream_key(stream::kSampler, index, 0);
  ProcessPair pair;
  pair.a = random_guess(problem, noise, grid, derived, scale);
  RngSpec derived_b;
  derived_b.seed = rng.stream_key(stream::kSampler, index, 1);
  pair.b = random_guess(problem, noise, grid, derived_b, scale);
  return pair;
}

}  // namespace

MonotonicityReport check_monotone(const FbsdeProblem& problem, const EnsembleNoise& noise,
                                  const TimeGrid& grid, int samples, const RngSpec& rng,
                                  double sample_scale) {
  problem.validate();
  if (samples < 1) throw ConfigError("check_monotone: samples must be >= 1");
  const auto& shape = noise.shape;
  const Eigen::MatrixXd& g = problem.coupling;
  const int R = shape.n_common;
  const int M = shape.n_particles;
  const int last = grid.n_steps;

  MonotonicityReport report;
  report.samples = samples;
  double beta11 = std::numeric_limits<double>::infinity();
  double beta21 = std::numeric_limits<double>::infinity();
  double beta12 = std::numeric_limits<double>::infinity();
  double beta22 = std::numeric_limits<double>::infinity();
  double alpha11 = std::numeric_limits<double>::infinity();
  bool any_beta11 = false, any_beta21 = false, any_beta12 = false, any_beta22 = false;
  bool any_alpha = false;

  FbsdeArgs args;
  for (int s = 0; s < samples; ++s) {
    ProcessPair pair = sample_pair(problem, noise, grid, rng, s, sample_scale);
    for (int k = 0; k <= last; ++k) {
      args.node = k;
      args.t = grid.node(k);
      double form = 0.0;
      double m_gx = 0.0, m_gxhat = 0.0, m_gty = 0.0, m_gtyhat = 0.0;
      for (int r = 0; r < R; ++r) {
        args.realization = r;
        const Eigen::VectorXd xa_hat = pair.a.x.conditional_mean(r, k);
        const Eigen::VectorXd ya_hat = pair.a.y.conditional_mean(r, k);
        const Eigen::VectorXd xb_hat = pair.b.x.conditional_mean(r, k);
        const Eigen::VectorXd yb_hat = pair.b.y.conditional_mean(r, k);

        // Conditional driver differences are already F0-measurable after the
        // within-realization average.
        Eigen::VectorXd dm_bar = Eigen::VectorXd::Zero(problem.dims.m1);
        if (problem.conditional_driver) {
          for (int m = 0; m < M; ++m) {
            args.particle = m;
            args.x = pair.a.x.path(r, m).col(k);
            args.y = pair.a.y.path(r, m).col(k);
            args.x_hat = xa_hat;
            args.y_hat = ya_hat;
            Eigen::VectorXd ma = problem.conditional_driver(args);
            args.x = pair.b.x.path(r, m).col(k);
            args.y = pair.b.y.path(r, m).col(k);
            args.x_hat = xb_hat;
            args.y_hat = yb_hat;
            dm_bar += ma - problem.conditional_driver(args);
          }
          dm_bar /= static_cast<double>(M);
        }

        for (int m = 0; m < M; ++m) {
          args.particle = m;
          args.x = pair.a.x.path(r, m).col(k);
          args.y = pair.a.y.path(r, m).col(k);
          args.x_hat = xa_hat;
          args.y_hat = ya_hat;
          Eigen::VectorXd psi_a = problem.forward_drift(args);
          Eigen::VectorXd d_a = problem.backward_driver(args);
          args.x = pair.b.x.path(r, m).col(k);
          args.y = pair.b.y.path(r, m).col(k);
          args.x_hat = xb_hat;
          args.y_hat = yb_hat;
          Eigen::VectorXd psi_b = problem.forward_drift(args);
          Eigen::VectorXd d_b = problem.backward_driver(args);

          Eigen::VectorXd dx = pair.a.x.path(r, m).col(k) - pair.b.x.path(r, m).col(k);
          Eigen::VectorXd dy = pair.a.y.path(r, m).col(k) - pair.b.y.path(r, m).col(k);
          Eigen::VectorXd dx_hat = xa_hat - xb_hat;
          Eigen::VectorXd dy_hat = ya_hat - yb_hat;

          form += (-(g.transpose() * (d_a - d_b + dm_bar))).dot(dx) +
                  (g * (psi_a - psi_b)).dot(dy);
          m_gx += (g * dx).squaredNorm();
          m_gxhat += (g * dx_hat).squaredNorm();
          m_gty += (g.transpose() * dy).squaredNorm();
          m_gtyhat += (g.transpose() * dy_hat).squaredNorm();
        }
      }
      const double inv = 1.0 / static_cast<double>(R * M);
      form *= inv;
      m_gx *= inv;
      m_gxhat *= inv;
      m_gty *= inv;
      m_gtyhat *= inv;

      const double slack = -form;
      if (slack < 0.0 && (m_gx > kDenomFloor || m_gty > kDenomFloor)) {
        report.form_holds = false;
        if (slack < -std::abs(report.witness_value)) {
          report.witness_sample = s;
          report.witness_node = k;
          report.witness_value = form;
        }
      }
      if (m_gx > kDenomFloor) {
        beta11 = std::min(beta11, slack / m_gx);
        any_beta11 = true;
      }
      if (m_gxhat > kDenomFloor) {
        beta21 = std::min(beta21, slack / m_gxhat);
        any_beta21 = true;
      }
      if (m_gty > kDenomFloor) {
        beta12 = std::min(beta12, slack / m_gty);
        any_beta12 = true;
      }
      if (m_gtyhat > kDenomFloor) {
        beta22 = std::min(beta22, slack / m_gtyhat);
        any_beta22 = true;
      }
    }

    // Terminal condition.
    double pairing = 0.0;
    double m_gxT = 0.0;
    for (int r = 0; r < R; ++r) {
      for (int m = 0; m < M; ++m) {
        Eigen::VectorXd xa = pair.a.x.path(r, m).col(last);
        Eigen::VectorXd xb = pair.b.x.path(r, m).col(last);
        Eigen::VectorXd dh = problem.terminal(r, m, xa) - problem.terminal(r, m, xb);
        pairing += dh.dot(g * (xa - xb));
        m_gxT += (g * (xa - xb)).squaredNorm();
      }
    }
    const double inv = 1.0 / static_cast<double>(R * M);
    pairing *= inv;
    m_gxT *= inv;
    if (m_gxT > kDenomFloor) {
      alpha11 = std::min(alpha11, pairing / m_gxT);
      any_alpha = true;
    }
  }

  report.beta11 = any_beta11 ? std::max(0.0, beta11) : 0.0;
  report.beta21 = any_beta21 ? std::max(0.0, beta21) : 0.0;
  report.beta12 = any_beta12 ? std::max(0.0, beta12) : 0.0;
  report.beta22 = any_beta22 ? std::max(0.0, beta22) : 0.0;
  report.alpha11 = any_alpha ? std::max(0.0, alpha11) : 0.0;
  if (any_alpha && alpha11 < 0.0) report.form_holds = false;

  report.sum_condition = report.beta11 + report.beta12 > 0.0;
  report.alpha_condition = report.alpha11 + report.beta12 > 0.0;
  if (problem.dims.n1 >= problem.dims.m1) {
    report.branch_condition = report.beta12 > 0.0;
  } else {
    report.branch_condition = report.beta11 > 0.0 && report.alpha11 > 0.0;
  }
  report.pass = report.form_holds && report.sum_condition && report.alpha_condition &&
                report.branch_condition;
  if (!report.sum_condition) report.note = "beta11 + beta12 > 0 violated";
  if (!report.form_holds) report.note = "bilinear form positive at sampled pair";
  if (report.note.empty()) {
    report.note = "sampled evidence only; the conditions are not certified for all pairs";
  }
  return report;
}

}  // namespace mfsg
