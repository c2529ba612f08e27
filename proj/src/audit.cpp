#include "mfsg/audit.hpp"

#include <algorithm>
#include <cmath>

namespace mfsg {

namespace {

constexpr std::uint64_t kAuditCommon = 0xA0D17ull;
constexpr std::uint64_t kAuditLeaderInit = 0xFFFFFFFFull;

struct RepStat {
  double sum = 0.0;
  double sum_sq = 0.0;
  int n = 0;

  void add(double x) {
    sum += x;
    sum_sq += x * x;
    ++n;
  }
  double mean() const { return sum / n; }
  double standard_error() const {
    if (n < 2) return 0.0;
    const double var = std::max(0.0, (sum_sq - sum * sum / n) / (n - 1));
    return std::sqrt(var / n);
  }
};

GapEstimate as_gap(const RepStat& stat, bool absolute, bool clamp = false) {
  GapEstimate g;
  g.value = stat.mean();
  if (absolute) g.value = std::abs(g.value);
  if (clamp) g.value = std::max(0.0, g.value);
  g.standard_error = stat.standard_error();
  g.reps = stat.n;
  return g;
}

}  // namespace

void FiniteNGame::validate(const TimeGrid& grid) const {
  if (!spec) throw ConfigError("FiniteNGame: missing game spec");
  if (!policy || policy->empty()) throw ConfigError("FiniteNGame: missing follower policy");
  if (n_followers < 1) throw ConfigError("FiniteNGame: need at least one follower");
  if (u0.values.cols() != grid.n_nodes()) {
    throw ConfigError("FiniteNGame: leader control does not match the grid");
  }
  if (reference_mean.n_nodes() != grid.n_nodes()) {
    throw ConfigError("FiniteNGame: reference mean path does not match the grid");
  }
  const double work = static_cast<double>(n_followers) * mc_reps * grid.n_steps;
  if (work > budget) {
    throw BudgetError("FiniteNGame: requested simulation exceeds the work budget (" +
                          std::to_string(work) + " particle-steps vs budget " +
                          std::to_string(budget) + ")",
                      work, budget);
  }
}

FiniteNPaths simulate_finite_n(const FiniteNGame& game, const TimeGrid& grid, int rep) {
  const GameSpec& spec = *game.spec;
  const int N = game.n_followers;
  const int kk = spec.dims.k;
  const int n = spec.dims.n;
  const int steps = grid.n_steps;
  const double h = grid.step();
  const std::uint64_t rep_id = static_cast<std::uint64_t>(rep);

  // Noise paths, by stream id so relabeling followers is a no-op.
  SamplePath w0;
  if (spec.dims.j0 > 0) {
    RngStream stream(game.rng, stream::kMonteCarlo, rep_id, kAuditCommon);
    w0 = sample_brownian(grid, spec.dims.j0, stream);
  }
  std::vector<SamplePath> wi(N);
  if (spec.dims.j > 0) {
    for (int i = 0; i < N; ++i) {
      RngStream stream(game.rng, stream::kMonteCarlo, rep_id, static_cast<std::uint64_t>(i));
      wi[i] = sample_brownian(grid, spec.dims.j, stream);
    }
  }
  Vec xi0(0);
  if (kk > 0) {
    RngStream stream(game.rng, stream::kInitialState, rep_id, kAuditLeaderInit);
    xi0 = spec.sample_xi0 ? spec.sample_xi0(stream) : Vec::Zero(kk);
  }
  std::vector<Vec> xi(N);
  for (int i = 0; i < N; ++i) {
    RngStream stream(game.rng, stream::kMonteCarlo + 64, rep_id, static_cast<std::uint64_t>(i));
    xi[i] = spec.sample_xi(stream);
  }

  FiniteNPaths out;
  out.followers.assign(N, SamplePath(grid, n));
  out.followers_dec.assign(N, SamplePath(grid, n));
  out.leader = SamplePath(grid, kk);
  out.leader_dec = SamplePath(grid, kk);
  out.average = SamplePath(grid, n);
  out.controls.assign(N, Mat::Zero(spec.dims.m, grid.n_nodes()));

  // Decentralized branch: states driven by the reference mean, controls from
  // the stationarity map with the policy-estimated adjoint. These control
  // processes are the open-loop objects deployed in the finite-N branch.
  if (kk > 0) out.leader_dec.set_value(0, xi0);
  for (int i = 0; i < N; ++i) out.followers_dec[i].set_value(0, xi[i]);
  for (int k = 0; k < steps; ++k) {
    const double t = grid.node(k);
    const Vec u0k = game.u0.values.col(k);
    const Vec zk = game.reference_mean.value(k);
    Vec x0k(0);
    if (kk > 0) {
      x0k = out.leader_dec.value(k);
      Vec next = x0k + h * spec.leader.b0(t, x0k, u0k, zk);
      if (spec.dims.j0 > 0) next += spec.leader.sigma0 * (w0.col(k + 1) - w0.col(k));
      out.leader_dec.set_value(k + 1, next);
    }
    for (int i = 0; i < N; ++i) {
      const Vec xik = out.followers_dec[i].value(k);
      const Vec p_hat = game.policy->p_hat(k, xik);
      Vec ui = spec.stationarity.alpha1(t, xik, x0k, u0k, zk, p_hat);
      ui = spec.follower_set.apply(ui);
      out.controls[i].col(k) = ui;
      Vec next = xik + h * spec.follower.b1(t, xik, ui, x0k, u0k, zk);
      if (spec.dims.j > 0) {
        next += spec.follower.sigma_tilde * (wi[i].col(k + 1) - wi[i].col(k));
      }
      if (!next.allFinite()) throw NumericalBlowupError("simulate_finite_n: state non-finite", k);
      out.followers_dec[i].set_value(k + 1, next);
    }
  }
  // Controls at the terminal node (cost quadrature never reads them, but keep
  // the profile total).
  for (int i = 0; i < N; ++i) {
    const Vec xik = out.followers_dec[i].value(steps);
    Vec x0k(0);
    if (kk > 0) x0k = out.leader_dec.value(steps);
    const Vec p_hat = game.policy->p_hat(steps, xik);
    out.controls[i].col(steps) = spec.follower_set.apply(spec.stationarity.alpha1(
        grid.node(steps), xik, x0k, game.u0.values.col(steps), game.reference_mean.value(steps),
        p_hat));
  }

  // Finite-N branch: same noises and control processes, empirical coupling.
  if (kk > 0) out.leader.set_value(0, xi0);
  for (int i = 0; i < N; ++i) out.followers[i].set_value(0, xi[i]);
  for (int k = 0; k <= steps; ++k) {
    Vec avg = Vec::Zero(n);
    for (int i = 0; i < N; ++i) avg += out.followers[i].value(k);  // fixed stream-id order
    avg /= static_cast<double>(N);
    out.average.set_value(k, avg);
    if (k == steps) break;
    const double t = grid.node(k);
    const Vec u0k = game.u0.values.col(k);
    Vec x0k(0);
    if (kk > 0) {
      x0k = out.leader.value(k);
      Vec next = x0k + h * spec.leader.b0(t, x0k, u0k, avg);
      if (spec.dims.j0 > 0) next += spec.leader.sigma0 * (w0.col(k + 1) - w0.col(k));
      out.leader.set_value(k + 1, next);
    }
    for (int i = 0; i < N; ++i) {
      const Vec xik = out.followers[i].value(k);
      Vec next = xik + h * spec.follower.b1(t, xik, out.controls[i].col(k), x0k, u0k, avg);
      if (spec.dims.j > 0) {
        next += spec.follower.sigma_tilde * (wi[i].col(k + 1) - wi[i].col(k));
      }
      if (!next.allFinite()) throw NumericalBlowupError("simulate_finite_n: state non-finite", k);
      out.followers[i].set_value(k + 1, next);
    }
  }
  return out;
}

double follower_cost_finite(const FiniteNGame& game, const FiniteNPaths& paths, int stream,
                            const TimeGrid& grid) {
  const GameSpec& spec = *game.spec;
  const double h = grid.step();
  double acc = 0.0;
  for (int k = 0; k < grid.n_steps; ++k) {
    Vec x0k(0);
    if (spec.dims.k > 0) x0k = paths.leader.value(k);
    acc += h * spec.costs.g1(grid.node(k), paths.followers[stream].value(k),
                             paths.controls[stream].col(k), x0k, game.u0.values.col(k),
                             paths.average.value(k));
  }
  if (spec.costs.G1) acc += spec.costs.G1(paths.followers[stream].value(grid.n_steps));
  return acc;
}

double follower_cost_decentralized(const FiniteNGame& game, const FiniteNPaths& paths, int stream,
                                   const TimeGrid& grid) {
  const GameSpec& spec = *game.spec;
  const double h = grid.step();
  double acc = 0.0;
  for (int k = 0; k < grid.n_steps; ++k) {
    Vec x0k(0);
    if (spec.dims.k > 0) x0k = paths.leader_dec.value(k);
    acc += h * spec.costs.g1(grid.node(k), paths.followers_dec[stream].value(k),
                             paths.controls[stream].col(k), x0k, game.u0.values.col(k),
                             game.reference_mean.value(k));
  }
  if (spec.costs.G1) acc += spec.costs.G1(paths.followers_dec[stream].value(grid.n_steps));
  return acc;
}

double leader_cost_finite(const FiniteNGame& game, const FiniteNPaths& paths,
                          const TimeGrid& grid) {
  const GameSpec& spec = *game.spec;
  const double h = grid.step();
  double acc = 0.0;
  for (int k = 0; k < grid.n_steps; ++k) {
    Vec x0k(0);
    if (spec.dims.k > 0) x0k = paths.leader.value(k);
    acc += h * spec.costs.g0(grid.node(k), x0k, game.u0.values.col(k), paths.average.value(k));
  }
  if (spec.costs.G0) acc += spec.costs.G0(paths.leader.value(grid.n_steps));
  return acc;
}

double leader_cost_decentralized(const FiniteNGame& game, const FiniteNPaths& paths,
                                 const TimeGrid& grid) {
  const GameSpec& spec = *game.spec;
  const double h = grid.step();
  double acc = 0.0;
  for (int k = 0; k < grid.n_steps; ++k) {
    Vec x0k(0);
    if (spec.dims.k > 0) x0k = paths.leader_dec.value(k);
    acc += h * spec.costs.g0(grid.node(k), x0k, game.u0.values.col(k),
                             game.reference_mean.value(k));
  }
  if (spec.costs.G0) acc += spec.costs.G0(paths.leader_dec.value(grid.n_steps));
  return acc;
}

GapEstimate follower_cost_gap(const FiniteNGame& game, const TimeGrid& grid) {
  game.validate(grid);
  RepStat stat;
  for (int rep = 0; rep < game.mc_reps; ++rep) {
    FiniteNPaths paths = simulate_finite_n(game, grid, rep);
    const int one = game.follower_one_stream;
    stat.add(follower_cost_finite(game, paths, one, grid) -
             follower_cost_decentralized(game, paths, one, grid));
  }
  return as_gap(stat, /*absolute=*/true);
}

namespace {

// Re-simulate the finite-N branch with follower `index` playing `control`
// instead of its decentralized control process.
FiniteNPaths resimulate_with_deviation(const FiniteNGame& game, const TimeGrid& grid,
                                       const FiniteNPaths& base, int index, const Mat& control,
                                       int rep) {
  const GameSpec& spec = *game.spec;
  const int N = game.n_followers;
  const int kk = spec.dims.k;
  const int n = spec.dims.n;
  const int steps = grid.n_steps;
  const double h = grid.step();
  const std::uint64_t rep_id = static_cast<std::uint64_t>(rep);

  SamplePath w0;
  if (spec.dims.j0 > 0) {
    RngStream stream(game.rng, stream::kMonteCarlo, rep_id, kAuditCommon);
    w0 = sample_brownian(grid, spec.dims.j0, stream);
  }
  std::vector<SamplePath> wi(N);
  if (spec.dims.j > 0) {
    for (int i = 0; i < N; ++i) {
      RngStream stream(game.rng, stream::kMonteCarlo, rep_id, static_cast<std::uint64_t>(i));
      wi[i] = sample_brownian(grid, spec.dims.j, stream);
    }
  }

  FiniteNPaths out = base;
  for (int i = 0; i < N; ++i) out.followers[i] = SamplePath(grid, n);
  out.leader = SamplePath(grid, kk);
  out.average = SamplePath(grid, n);
  out.controls[index] = control;

  if (kk > 0) out.leader.set_value(0, base.leader_dec.value(0));
  for (int i = 0; i < N; ++i) out.followers[i].set_value(0, base.followers_dec[i].value(0));
  for (int k = 0; k <= steps; ++k) {
    Vec avg = Vec::Zero(n);
    for (int i = 0; i < N; ++i) avg += out.followers[i].value(k);
    avg /= static_cast<double>(N);
    out.average.set_value(k, avg);
    if (k == steps) break;
    const double t = grid.node(k);
    const Vec u0k = game.u0.values.col(k);
    Vec x0k(0);
    if (kk > 0) {
      x0k = out.leader.value(k);
      Vec next = x0k + h * spec.leader.b0(t, x0k, u0k, avg);
      if (spec.dims.j0 > 0) next += spec.leader.sigma0 * (w0.col(k + 1) - w0.col(k));
      out.leader.set_value(k + 1, next);
    }
    for (int i = 0; i < N; ++i) {
      const Vec xik = out.followers[i].value(k);
      Vec next = xik + h * spec.follower.b1(t, xik, out.controls[i].col(k), x0k, u0k, avg);
      if (spec.dims.j > 0) {
        next += spec.follower.sigma_tilde * (wi[i].col(k + 1) - wi[i].col(k));
      }
      out.followers[i].set_value(k + 1, next);
    }
  }
  return out;
}

}  // namespace

GapEstimate deviation_test(const FiniteNGame& game, const DeviationSpec& deviation,
                           const TimeGrid& grid) {
  game.validate(grid);
  if (!deviation.identity() && deviation.control.values.cols() != grid.n_nodes()) {
    throw ConfigError("deviation_test: deviation control does not match the grid");
  }
  RepStat stat;
  const int one = (deviation.index == 0) ? game.follower_one_stream : deviation.index;
  for (int rep = 0; rep < game.mc_reps; ++rep) {
    FiniteNPaths base = simulate_finite_n(game, grid, rep);
    const double base_cost = follower_cost_finite(game, base, one, grid);
    if (deviation.identity()) {
      stat.add(0.0);  // same control process, same simulation
      continue;
    }
    FiniteNPaths perturbed =
        resimulate_with_deviation(game, grid, base, one, deviation.control.values, rep);
    stat.add(base_cost - follower_cost_finite(game, perturbed, one, grid));
  }
  return as_gap(stat, /*absolute=*/false);
}

AuditInputs make_audit_inputs(const GameSpec& spec, const ControlProfile& u0,
                              const EnsembleConfig& follower_ens, const RngSpec& rng,
                              const TimeGrid& grid, double follower_tol) {
  AuditInputs inputs;
  inputs.spec = &spec;
  inputs.u0 = u0;
  inputs.rng = rng;
  FollowerMPSolution mp = solve_follower_mp(u0, spec, follower_ens, rng, grid, follower_tol);
  inputs.policy = std::move(mp.policy);
  // Limit conditional-mean path: average the per-realization paths (audits
  // target the trivial common-noise filtration, where they coincide).
  inputs.reference_mean = SamplePath(grid, spec.dims.n);
  for (int k = 0; k < grid.n_nodes(); ++k) {
    Vec acc = Vec::Zero(spec.dims.n);
    for (const auto& z : mp.z_path) acc += z.value(k);
    inputs.reference_mean.set_value(k, acc / static_cast<double>(mp.z_path.size()));
  }
  return inputs;
}

namespace {

std::optional<double> loglog_slope(const std::vector<double>& ns, const std::vector<double>& ys) {
  if (ns.size() < 3) return std::nullopt;
  for (double y : ys) {
    if (!(y > 0.0)) return std::nullopt;
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const int n = static_cast<int>(ns.size());
  for (int i = 0; i < n; ++i) {
    const double lx = std::log(ns[i]);
    const double ly = std::log(ys[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) return std::nullopt;
  return (n * sxy - sx * sy) / denom;
}

}  // namespace

EpsilonReport epsilon_curves(const AuditInputs& inputs, const std::vector<int>& ladder,
                             const TimeGrid& grid) {
  if (!inputs.spec) throw ConfigError("epsilon_curves: missing game spec");
  EpsilonReport report;
  const double h = grid.step();
  const int n_dim = inputs.spec->dims.n;

  for (int N : ladder) {
    FiniteNGame game;
    game.spec = inputs.spec;
    game.u0 = inputs.u0;
    game.policy = &inputs.policy;
    game.reference_mean = inputs.reference_mean;
    game.n_followers = N;
    game.mc_reps = inputs.mc_reps;
    game.rng = inputs.rng;
    game.budget = inputs.budget;
    game.validate(grid);

    RepStat follower_stat, leader_stat, chaos_stat;
    std::vector<RepStat> deviation_stats(inputs.deviations.size());
    std::vector<RepStat> alt_stats(inputs.alternatives.size());
    RepStat own_leader_cost;

    for (int rep = 0; rep < inputs.mc_reps; ++rep) {
      FiniteNPaths paths = simulate_finite_n(game, grid, rep);
      const int one = game.follower_one_stream;
      const double jn1 = follower_cost_finite(game, paths, one, grid);
      follower_stat.add(jn1 - follower_cost_decentralized(game, paths, one, grid));
      const double jn0 = leader_cost_finite(game, paths, grid);
      leader_stat.add(jn0 - leader_cost_decentralized(game, paths, grid));
      own_leader_cost.add(jn0);

      // Chaos gap of the decentralized population, squared then integrated.
      double chaos = 0.0;
      for (int k = 0; k < grid.n_steps; ++k) {
        Vec avg = Vec::Zero(n_dim);
        for (int i = 0; i < N; ++i) avg += paths.followers_dec[i].value(k);
        avg /= static_cast<double>(N);
        chaos += h * (avg - inputs.reference_mean.value(k)).squaredNorm();
      }
      chaos_stat.add(chaos);

      for (std::size_t d = 0; d < inputs.deviations.size(); ++d) {
        const DeviationSpec& dev = inputs.deviations[d];
        if (dev.identity()) {
          deviation_stats[d].add(0.0);
          continue;
        }
        FiniteNPaths perturbed =
            resimulate_with_deviation(game, grid, paths, one, dev.control.values, rep);
        deviation_stats[d].add(jn1 - follower_cost_finite(game, perturbed, one, grid));
      }
    }

    // Alternatives run their own coupled simulations under the same streams.
    for (std::size_t a = 0; a < inputs.alternatives.size(); ++a) {
      const AuditAlternative& alt = inputs.alternatives[a];
      FiniteNGame alt_game = game;
      alt_game.u0 = alt.u0;
      alt_game.policy = &alt.policy;
      alt_game.reference_mean = alt.reference_mean;
      for (int rep = 0; rep < inputs.mc_reps; ++rep) {
        FiniteNPaths paths = simulate_finite_n(alt_game, grid, rep);
        alt_stats[a].add(leader_cost_finite(alt_game, paths, grid));
      }
    }

    EpsilonRecord record;
    record.n_followers = N;
    record.follower_gap = as_gap(follower_stat, /*absolute=*/true);
    record.leader_gap = as_gap(leader_stat, /*absolute=*/true);

    // Chaos gap reported as the L2 norm (sqrt of the mean squared distance),
    // delta-method standard error.
    GapEstimate chaos;
    const double mean_sq = chaos_stat.mean();
    chaos.value = std::sqrt(std::max(0.0, mean_sq));
    chaos.standard_error =
        chaos.value > 0.0 ? chaos_stat.standard_error() / (2.0 * chaos.value) : 0.0;
    chaos.reps = chaos_stat.n;
    record.chaos_gap = chaos;

    GapEstimate best_gain;
    for (auto& stat : deviation_stats) {
      GapEstimate g = as_gap(stat, /*absolute=*/false, /*clamp=*/true);
      if (g.reps > 0 && g.value >= best_gain.value) best_gain = g;
    }
    record.deviation_gain = best_gain;

    GapEstimate excess;
    if (!alt_stats.empty()) {
      double best_alt = std::numeric_limits<double>::infinity();
      double best_alt_se = 0.0;
      for (auto& stat : alt_stats) {
        if (stat.mean() < best_alt) {
          best_alt = stat.mean();
          best_alt_se = stat.standard_error();
        }
      }
      excess.value = std::max(0.0, own_leader_cost.mean() - best_alt);
      excess.standard_error = std::hypot(own_leader_cost.standard_error(), best_alt_se);
      excess.reps = own_leader_cost.n;
    }
    record.leader_alt_excess = excess;
    report.records.push_back(record);
  }

  std::vector<double> ns, chaos_vals, follower_vals;
  for (const auto& r : report.records) {
    ns.push_back(static_cast<double>(r.n_followers));
    chaos_vals.push_back(r.chaos_gap.value);
    follower_vals.push_back(r.follower_gap.value);
  }
  report.chaos_slope = loglog_slope(ns, chaos_vals);
  report.follower_slope = loglog_slope(ns, follower_vals);
  if (ladder.size() < 3) report.notes = "slope fits omitted: fewer than 3 ladder points";
  if (!report.notes.empty()) report.notes += "; ";
  report.notes +=
      "uniformity over the whole admissible leader-control set is assumed, not certified: the "
      "audit samples finitely many controls";
  return report;
}

}  // namespace mfsg
