#pragma once

#include <vector>

#include <Eigen/Dense>

#include "mfsg/errors.hpp"
#include "mfsg/sample_path.hpp"

namespace mfsg {

// R common-noise realizations, M idiosyncratic particles per realization.
struct EnsembleShape {
  int n_common = 1;
  int n_particles = 1;

  int total() const { return n_common * n_particles; }
  int flat(int realization, int particle) const { return realization * n_particles + particle; }
};

// One path per (realization, particle), all on the same grid with equal dim.
// Conditional expectation given the common-noise filtration is realized as the
// within-realization particle mean; the grand mean is defined as the equal-
// weight average of conditional means so the tower property holds bit-exactly.
class PathEnsemble {
 public:
  PathEnsemble() = default;
  PathEnsemble(const TimeGrid& grid, int dim, const EnsembleShape& shape);

  const EnsembleShape& shape() const { return shape_; }
  const TimeGrid& grid() const { return paths_.front().grid(); }
  int dim() const { return dim_; }

  SamplePath& path(int realization, int particle) { return paths_[shape_.flat(realization, particle)]; }
  const SamplePath& path(int realization, int particle) const {
    return paths_[shape_.flat(realization, particle)];
  }
  SamplePath& flat(int index) { return paths_[index]; }
  const SamplePath& flat(int index) const { return paths_[index]; }

  Eigen::VectorXd conditional_mean(int realization, int k) const;
  Eigen::VectorXd grand_mean(int k) const;

  bool all_finite() const;

  // Ensemble-average discrete squared L2 norm plus nothing else.
  double mean_squared_l2() const;
  // Ensemble-average squared norm of the terminal node.
  double mean_terminal_sq() const;

 private:
  EnsembleShape shape_;
  int dim_ = 0;
  std::vector<SamplePath> paths_;
};

// Noise for a full ensemble: one common Brownian path per realization plus one
// idiosyncratic Brownian path per particle, all derived from (seed, purpose,
// realization, particle) streams.
struct EnsembleNoise {
  EnsembleShape shape;
  int dim_common = 0;       // j0
  int dim_idiosyncratic = 0;  // j
  std::vector<SamplePath> common;          // size n_common (empty paths when j0 = 0)
  std::vector<SamplePath> idiosyncratic;   // size total() (empty paths when j = 0)

  const SamplePath& common_path(int realization) const { return common[realization]; }
  const SamplePath& idio_path(int realization, int particle) const {
    return idiosyncratic[shape.flat(realization, particle)];
  }
};

EnsembleNoise make_ensemble_noise(const TimeGrid& grid, int dim_common, int dim_idiosyncratic,
                                  const EnsembleShape& shape, const RngSpec& rng,
                                  std::uint64_t realization_offset = 0);

// Least-squares conditional expectation estimator on a polynomial basis of the
// forward state, fit per common-noise realization. Degrades gracefully to a
// lower degree (ultimately the plain mean) when the particle count is small.
class ConditionalRegression {
 public:
  explicit ConditionalRegression(int degree) : degree_(degree) {}

  // states: d x M, targets: q x M. Returns fitted targets, q x M.
  Eigen::MatrixXd fit_predict(const Eigen::MatrixXd& states, const Eigen::MatrixXd& targets) const;

  // Basis evaluation for external reuse (policy tables).
  static Eigen::VectorXd basis(const Eigen::VectorXd& state, int degree);
  static int basis_size(int dim, int degree);

  int degree() const { return degree_; }

 private:
  int degree_;
};

Eigen::VectorXd empirical_average(const std::vector<Eigen::VectorXd>& states);

}  // namespace mfsg
