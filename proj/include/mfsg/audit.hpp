#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mfsg/stackelberg.hpp"

namespace mfsg {

// Finite-N deployment of the decentralized strategy profile: followers play
// the open-loop realization of the stationarity-map control evaluated along
// their own decentralized state (policy table for the adjoint), the leader
// plays u0. Followers are indexed by noise-stream id so relabeling them is a
// bit-exact no-op on aggregate quantities.
struct FiniteNGame {
  const GameSpec* spec = nullptr;
  ControlProfile u0;
  const FollowerPolicy* policy = nullptr;
  SamplePath reference_mean;  // limit conditional-mean path fed to the decentralized branch
  int n_followers = 1;
  int mc_reps = 1;
  RngSpec rng;
  double budget = 4.0e9;  // particle-steps guard
  int follower_one_stream = 0;  // which stream id plays "follower 1"

  void validate(const TimeGrid& grid) const;
};

// A unilateral deviation for the designated follower. An empty control means
// "play the decentralized control anyway" (the identity deviation).
struct DeviationSpec {
  int index = 0;
  ControlProfile control;
  std::string name = "deviation";
  bool identity() const { return control.values.size() == 0; }
};

struct GapEstimate {
  double value = 0.0;
  double standard_error = 0.0;
  int reps = 0;
};

// One Monte Carlo repetition of the coupled finite-N and decentralized
// simulations under common random numbers.
struct FiniteNPaths {
  SamplePath leader;                   // finite-N leader state (dim k)
  std::vector<SamplePath> followers;   // finite-N follower states, by stream id
  SamplePath average;                  // empirical state-average path
  SamplePath leader_dec;               // decentralized leader state
  std::vector<SamplePath> followers_dec;
  std::vector<Mat> controls;           // realized decentralized controls, by stream id
};

FiniteNPaths simulate_finite_n(const FiniteNGame& game, const TimeGrid& grid, int rep);

// Cost of follower `stream` and of the leader along given paths.
double follower_cost_finite(const FiniteNGame& game, const FiniteNPaths& paths, int stream,
                            const TimeGrid& grid);
double follower_cost_decentralized(const FiniteNGame& game, const FiniteNPaths& paths, int stream,
                                   const TimeGrid& grid);
double leader_cost_finite(const FiniteNGame& game, const FiniteNPaths& paths,
                          const TimeGrid& grid);
double leader_cost_decentralized(const FiniteNGame& game, const FiniteNPaths& paths,
                                 const TimeGrid& grid);

// |J^N_1 - Jbar_1| over mc_reps repetitions, common random numbers.
GapEstimate follower_cost_gap(const FiniteNGame& game, const TimeGrid& grid);

// Mean gain J^N_1(decentralized) - J^N_1(deviation) of a unilateral deviation;
// positive gain means deviating helps.
GapEstimate deviation_test(const FiniteNGame& game, const DeviationSpec& deviation,
                           const TimeGrid& grid);

struct EpsilonRecord {
  int n_followers = 0;
  GapEstimate follower_gap;       // |J^N_1 - Jbar_1|
  GapEstimate deviation_gain;     // max over deviations of max(0, gain)
  GapEstimate leader_gap;         // |J^N_0 - Jbar_0|
  GapEstimate leader_alt_excess;  // max(0, J^N_0(u0) - min over alternatives)
  GapEstimate chaos_gap;          // discrete L2 distance of the empirical mean to the limit mean
};

struct EpsilonReport {
  std::vector<EpsilonRecord> records;
  std::optional<double> chaos_slope;     // log-log decay fit (needs >= 3 ladder points)
  std::optional<double> follower_slope;
  std::string notes;
};

struct AuditAlternative {
  ControlProfile u0;
  FollowerPolicy policy;
  SamplePath reference_mean;
  std::string name;
};

struct AuditInputs {
  const GameSpec* spec = nullptr;
  ControlProfile u0;  // the candidate optimum
  FollowerPolicy policy;
  SamplePath reference_mean;
  std::vector<AuditAlternative> alternatives;
  std::vector<DeviationSpec> deviations;
  int mc_reps = 100;
  RngSpec rng;
  double budget = 4.0e9;
};

// Builds the audit inputs for one leader control by solving the follower
// mean-field fixed point and extracting the policy and limit-mean path.
AuditInputs make_audit_inputs(const GameSpec& spec, const ControlProfile& u0,
                              const EnsembleConfig& follower_ens, const RngSpec& rng,
                              const TimeGrid& grid, double follower_tol);

EpsilonReport epsilon_curves(const AuditInputs& inputs, const std::vector<int>& ladder,
                             const TimeGrid& grid);

}  // namespace mfsg
