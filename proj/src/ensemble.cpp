#include "mfsg/ensemble.hpp"

namespace mfsg {

PathEnsemble::PathEnsemble(const TimeGrid& grid, int dim, const EnsembleShape& shape)
    : shape_(shape), dim_(dim) {
  if (shape.n_common < 1 || shape.n_particles < 1) {
    throw ConfigError("PathEnsemble: ensemble shape must be positive");
  }
  paths_.assign(static_cast<std::size_t>(shape.total()), SamplePath(grid, dim));
}

Eigen::VectorXd PathEnsemble::conditional_mean(int realization, int k) const {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim_);
  for (int m = 0; m < shape_.n_particles; ++m) acc += path(realization, m).col(k);
  return acc / static_cast<double>(shape_.n_particles);
}

Eigen::VectorXd PathEnsemble::grand_mean(int k) const {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim_);
  for (int r = 0; r < shape_.n_common; ++r) acc += conditional_mean(r, k);
  return acc / static_cast<double>(shape_.n_common);
}

bool PathEnsemble::all_finite() const {
  for (const auto& p : paths_) {
    if (!p.all_finite()) return false;
  }
  return true;
}

double PathEnsemble::mean_squared_l2() const {
  double acc = 0.0;
  for (const auto& p : paths_) acc += p.squared_l2();
  return acc / static_cast<double>(shape_.total());
}

double PathEnsemble::mean_terminal_sq() const {
  const int last = paths_.front().n_nodes() - 1;
  double acc = 0.0;
  for (const auto& p : paths_) acc += p.col(last).squaredNorm();
  return acc / static_cast<double>(shape_.total());
}

EnsembleNoise make_ensemble_noise(const TimeGrid& grid, int dim_common, int dim_idiosyncratic,
                                  const EnsembleShape& shape, const RngSpec& rng,
                                  std::uint64_t realization_offset) {
  EnsembleNoise noise;
  noise.shape = shape;
  noise.dim_common = dim_common;
  noise.dim_idiosyncratic = dim_idiosyncratic;
  noise.common.reserve(shape.n_common);
  for (int r = 0; r < shape.n_common; ++r) {
    if (dim_common > 0) {
      RngStream stream(rng, stream::kCommonNoise, realization_offset + r, 0);
      noise.common.push_back(sample_brownian(grid, dim_common, stream));
    } else {
      noise.common.emplace_back();
    }
  }
  noise.idiosyncratic.reserve(shape.total());
  for (int r = 0; r < shape.n_common; ++r) {
    for (int m = 0; m < shape.n_particles; ++m) {
      if (dim_idiosyncratic > 0) {
        RngStream stream(rng, stream::kIdiosyncraticNoise, realization_offset + r, m);
        noise.idiosyncratic.push_back(sample_brownian(grid, dim_idiosyncratic, stream));
      } else {
        noise.idiosyncratic.emplace_back();
      }
    }
  }
  return noise;
}

int ConditionalRegression::basis_size(int dim, int degree) {
  int size = 1;
  if (degree >= 1) size += dim;
  if (degree >= 2) size += dim * (dim + 1) / 2;
  return size;
}

Eigen::VectorXd ConditionalRegression::basis(const Eigen::VectorXd& state, int degree) {
  const int d = static_cast<int>(state.size());
  Eigen::VectorXd phi(basis_size(d, degree));
  int idx = 0;
  phi[idx++] = 1.0;
  if (degree >= 1) {
    for (int i = 0; i < d; ++i) phi[idx++] = state[i];
  }
  if (degree >= 2) {
    for (int i = 0; i < d; ++i) {
      for (int j = i; j < d; ++j) phi[idx++] = state[i] * state[j];
    }
  }
  return phi;
}

Eigen::MatrixXd ConditionalRegression::fit_predict(const Eigen::MatrixXd& states,
                                                   const Eigen::MatrixXd& targets) const {
  const int n_samples = static_cast<int>(states.cols());
  const int d = static_cast<int>(states.rows());
  if (targets.cols() != n_samples) {
    throw ConfigError("ConditionalRegression: states/targets sample count mismatch");
  }
  int degree = degree_;
  while (degree > 0 && n_samples < 2 * basis_size(d, degree)) --degree;
  if (degree == 0) {
    Eigen::VectorXd mean = targets.rowwise().mean();
    return mean.replicate(1, n_samples);
  }
  const int nb = basis_size(d, degree);
  Eigen::MatrixXd design(n_samples, nb);
  for (int s = 0; s < n_samples; ++s) design.row(s) = basis(states.col(s), degree).transpose();
  // Ridge-regularized normal equations: smooth in the data (no pivoting
  // branches, which would put a discontinuity floor under fixed-point
  // iterations that call the estimator every pass) and safe on degenerate
  // ensembles such as identical particles.
  Eigen::MatrixXd gram = design.transpose() * design;
  const double ridge = 1e-12 * (gram.trace() / nb + 1.0);
  gram.diagonal().array() += ridge;
  Eigen::MatrixXd coeffs = gram.ldlt().solve(design.transpose() * targets.transpose());
  return (design * coeffs).transpose();
}

Eigen::VectorXd empirical_average(const std::vector<Eigen::VectorXd>& states) {
  if (states.empty()) throw ConfigError("empirical_average: empty state list");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(states.front().size());
  for (const auto& s : states) {
    if (s.size() != acc.size()) throw ConfigError("empirical_average: dimension mismatch");
    acc += s;
  }
  return acc / static_cast<double>(states.size());
}

}  // namespace mfsg
