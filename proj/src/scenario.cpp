#include "mfsg/scenario.hpp"

#include <chrono>
#include <iostream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "mfsg/audit.hpp"
#include "mfsg/report_io.hpp"
#include "mfsg/riccati.hpp"
#include "mfsg/unicycle.hpp"
#include "mfsg/validate.hpp"

namespace mfsg {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Strict schema: every key in the scenario must be known.
// ---------------------------------------------------------------------------

const std::map<std::string, std::set<std::string>> kSections = {
    {"", {"family", "grid", "params", "fbsde", "solver", "ensemble", "descent", "audit",
          "validate"}},
    {"grid", {"T", "n_steps"}},
    {"params", {"v", "sigma", "a", "b", "c0", "c1", "d0", "d1", "e1", "T"}},
    {"fbsde", {"family", "a", "b", "q", "r_T", "x0", "dim", "beta", "gamma", "theta0", "theta1"}},
    {"solver", {"tol", "max_iter", "damping", "stages", "regression_degree"}},
    {"ensemble", {"n_common", "n_particles"}},
    {"descent", {"tol", "max_iter", "initial_step"}},
    {"audit",
     {"ladder", "mc_reps", "budget", "deviation_levels", "alternative_levels", "follower_tol",
      "n_particles"}},
    {"validate", {"samples", "box_radius"}},
};

void check_keys(const json& node, const std::string& section) {
  auto it = kSections.find(section);
  if (it == kSections.end()) return;
  for (const auto& item : node.items()) {
    if (!it->second.count(item.key())) {
      throw ConfigError("scenario: unknown key '" +
                        (section.empty() ? item.key() : section + "." + item.key()) + "'");
    }
    if (item.value().is_object()) check_keys(item.value(), item.key());
  }
}

json parse_override_value(const std::string& text) {
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) return json(text);
  return value;
}

void apply_override(json& root, const std::string& dotted, const std::string& text) {
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot - start);
    if (key.empty()) throw ConfigError("scenario: malformed override key '" + dotted + "'");
    if (dot == std::string::npos) {
      (*node)[key] = parse_override_value(text);
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

double jget(const json& node, const std::string& key, double fallback) {
  return node.contains(key) ? node.at(key).get<double>() : fallback;
}
int jget_int(const json& node, const std::string& key, int fallback) {
  return node.contains(key) ? node.at(key).get<int>() : fallback;
}

TimeGrid grid_from(const json& config) {
  const json grid = config.value("grid", json::object());
  return make_grid(jget(grid, "T", 1.0), jget_int(grid, "n_steps", 200));
}

UnicycleParams params_from(const json& config) {
  const json p = config.value("params", json::object());
  UnicycleParams params;
  params.v = jget(p, "v", params.v);
  params.sigma = jget(p, "sigma", params.sigma);
  params.a = jget(p, "a", params.a);
  params.b = jget(p, "b", params.b);
  params.c0 = jget(p, "c0", params.c0);
  params.c1 = jget(p, "c1", params.c1);
  params.d0 = jget(p, "d0", params.d0);
  params.d1 = jget(p, "d1", params.d1);
  params.e1 = jget(p, "e1", params.e1);
  params.T = jget(p, "T", params.T);
  params.validate();
  return params;
}

// ---------------------------------------------------------------------------
// Output collection and the run manifest
// ---------------------------------------------------------------------------

struct RunOutputs {
  std::vector<std::pair<std::string, std::string>> files;  // name -> content
  json stages = json::array();

  void add(const std::string& name, const std::string& content) {
    files.emplace_back(name, content);
  }
  void stage(const std::string& name, json info) {
    info["stage"] = name;
    stages.push_back(std::move(info));
  }
};

char hex_digit(int v) { return v < 10 ? static_cast<char>('0' + v) : static_cast<char>('a' + v - 10); }

std::string hex64(std::uint64_t value) {
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = hex_digit(static_cast<int>(value & 0xF));
    value >>= 4;
  }
  return out;
}

void write_outputs(const ScenarioConfig& config, const json& resolved, const RunOutputs& outputs,
                   double wall_seconds) {
  std::filesystem::create_directories(config.out_dir);
  json inventory = json::array();
  for (const auto& [name, content] : outputs.files) {
    const auto path = config.out_dir / name;
    write_text_file(path, content);
    inventory.push_back({{"path", name},
                         {"bytes", content.size()},
                         {"fnv1a64", hex64(fnv1a64(content))}});
  }
  json manifest;
  manifest["command"] = config.command;
  manifest["seed"] = config.seed;
  manifest["version"] = kVersion;
  manifest["config"] = resolved;
  manifest["wall_clock_seconds"] = wall_seconds;
  manifest["stages"] = outputs.stages;
  manifest["outputs"] = inventory;
  write_text_file(config.out_dir / "manifest.json", manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Command implementations
// ---------------------------------------------------------------------------

FbsdeProblem fbsde_from(const json& config, std::string* family_out) {
  const json f = config.value("fbsde", json::object());
  const std::string family = f.value("family", std::string("lq-scalar"));
  if (family_out) *family_out = family;
  if (family == "lq-scalar" || family == "lq-test") {
    RiccatiLqOracle oracle;
    oracle.a = jget(f, "a", 0.0);
    oracle.b = jget(f, "b", 1.0);
    oracle.q = jget(f, "q", 0.0);
    oracle.r_terminal = jget(f, "r_T", 1.0);
    oracle.x0 = jget(f, "x0", 1.0);
    return make_lq_problem(oracle);
  }
  if (family == "cmf-monotone") {
    const int dim = jget_int(f, "dim", 2);
    return make_monotone_problem(dim, jget(f, "beta", 0.5), jget(f, "gamma", 0.25),
                                 jget(f, "theta0", 0.2), jget(f, "theta1", 0.3),
                                 Vec::Zero(dim));
  }
  if (family == "zero") {
    const int dim = jget_int(f, "dim", 2);
    return make_zero_problem(dim, dim, Mat::Constant(dim, 1, jget(f, "theta0", 0.2)),
                             Mat::Constant(dim, 1, jget(f, "theta1", 0.3)), Vec::Zero(dim));
  }
  throw ConfigError("scenario: unknown fbsde family '" + family + "'");
}

void run_solve_fbsde(const json& config, const RngSpec& rng, RunOutputs& outputs) {
  const TimeGrid grid = grid_from(config);
  std::string family;
  FbsdeProblem problem = fbsde_from(config, &family);
  const json solver = config.value("solver", json::object());
  const json ens = config.value("ensemble", json::object());
  EnsembleShape shape{jget_int(ens, "n_common", problem.dims.j0 > 0 ? 4 : 1),
                      jget_int(ens, "n_particles", problem.dims.j > 0 ? 64 : 1)};
  EnsembleNoise noise = make_ensemble_noise(grid, problem.dims.j0, problem.dims.j, shape, rng);

  PicardOptions options;
  options.tol = jget(solver, "tol", 1e-10);
  options.max_iter = jget_int(solver, "max_iter", 300);
  options.damping = jget(solver, "damping", 0.5);
  options.regression_degree = jget_int(solver, "regression_degree", 2);

  FbsdeSolution picard = solve_picard(problem, nullptr, noise, grid, options);
  ContinuationSchedule schedule = ContinuationSchedule::uniform(jget_int(solver, "stages", 2));
  schedule.stage_tol = options.tol;
  schedule.stage_max_iter = options.max_iter;
  schedule.damping = options.damping;
  schedule.regression_degree = options.regression_degree;
  FbsdeSolution continued = solve_continuation(problem, schedule, noise, grid);
  FbsdeResidual residual =
      solution_residual(problem, continued, noise, grid, options.regression_degree);

  json diag;
  diag["family"] = family;
  diag["picard"] = {{"iterations", picard.iterations},
                    {"converged", picard.converged},
                    {"final_distance", picard.final_distance},
                    {"distances", picard.iterate_distances},
                    {"contraction_factors", picard.contraction_factors}};
  diag["continuation"] = {{"stage_ladder", continued.stage_ladder},
                          {"iterations", continued.iterations},
                          {"final_distance", continued.final_distance},
                          {"distances", continued.iterate_distances},
                          {"contraction_factors", continued.contraction_factors}};
  diag["residual"] = {{"forward_max", residual.forward_max},
                      {"backward_max", residual.backward_max},
                      {"forward_l2", residual.forward_l2},
                      {"backward_l2", residual.backward_l2}};
  outputs.add("fbsde_diagnostics.json", diag.dump(2) + "\n");

  CsvTable table;
  table.header = {"t"};
  for (int i = 0; i < problem.dims.n1; ++i) table.header.push_back("x_mean" + std::to_string(i));
  for (int i = 0; i < problem.dims.m1; ++i) table.header.push_back("y_mean" + std::to_string(i));
  for (int k = 0; k < grid.n_nodes(); ++k) {
    std::vector<double> row{grid.node(k)};
    Vec xm = continued.x.grand_mean(k);
    Vec ym = continued.y.grand_mean(k);
    for (int i = 0; i < xm.size(); ++i) row.push_back(xm[i]);
    for (int i = 0; i < ym.size(); ++i) row.push_back(ym[i]);
    table.add_row(row);
  }
  outputs.add("fbsde_paths.csv", table.serialize());
  outputs.stage("solve-fbsde", {{"picard_iterations", picard.iterations},
                                {"continuation_stages", continued.stage_ladder.size()}});
}

void run_follower(const json& config, const RngSpec& rng, RunOutputs& outputs) {
  const TimeGrid grid = grid_from(config);
  const UnicycleParams params = params_from(config);
  const json ens = config.value("ensemble", json::object());
  const json solver = config.value("solver", json::object());
  EnsembleConfig ecfg;
  ecfg.n_common = jget_int(ens, "n_common", 1);
  ecfg.n_particles = jget_int(ens, "n_particles", params.sigma > 0.0 ? 2000 : 1);
  ControlProfile u0 = ControlProfile::zero(1, grid);
  UnicycleFollowerSolution sol = solve_unicycle_follower(
      u0, params, ecfg, rng, grid, jget(solver, "tol", 1e-10));
  GameSpec spec = make_unicycle_game(params);
  SamplePath residual = follower_stationarity_residual(sol.mp, spec, u0);

  CsvTable table;
  table.header = {"t", "x", "y", "theta", "w", "ui", "p13"};
  const SamplePath& x = sol.mp.follower_state.path(0, 0);
  const SamplePath& p = sol.mp.adjoint.path(0, 0);
  const SamplePath& u = sol.mp.control.path(0, 0);
  for (int k = 0; k < grid.n_nodes(); ++k) {
    table.add_row({grid.node(k), x.data()(0, k), x.data()(1, k), x.data()(2, k), x.data()(3, k),
                   u.data()(0, k), p.data()(2, k)});
  }
  outputs.add("follower_trajectory.csv", table.serialize());

  json diag;
  diag["outer_iterations"] = sol.mp.outer_iterations;
  diag["converged"] = sol.mp.converged;
  diag["final_change"] = sol.mp.final_change;
  diag["follower_cost"] = sol.mp.follower_cost;
  diag["max_stationarity_residual"] = residual.max_abs();
  outputs.add("follower_diagnostics.json", diag.dump(2) + "\n");
  outputs.stage("follower", {{"outer_iterations", sol.mp.outer_iterations},
                             {"converged", sol.mp.converged}});
}

void run_leader(const json& config, const RngSpec& rng, RunOutputs& outputs) {
  const TimeGrid grid = grid_from(config);
  UnicycleParams params = params_from(config);
  if (params.sigma > 0.0) {
    throw ConfigError("leader: the control-center design is deterministic; set params.sigma = 0");
  }
  const json descent = config.value("descent", json::object());
  GameSpec spec = make_unicycle_game(params);
  LeaderCoefficients lc = make_unicycle_leader_coefficients(params);
  DescentOptions options;
  options.tol = jget(descent, "tol", 1e-6);
  options.max_iter = jget_int(descent, "max_iter", 200);
  options.initial_step = jget(descent, "initial_step", 0.5);
  options.inner.tol = 1e-16;
  DescentResult result =
      leader_descent(ControlProfile::zero(1, grid), spec, lc, rng, grid, options);
  ConsistencyDiagnostics diag = consistency_residual(result.consistency, spec, lc, grid);

  CsvTable table;
  table.header = {"t", "u0"};
  for (int k = 0; k < grid.n_nodes(); ++k) {
    table.add_row({grid.node(k), result.u0_dagger.values(0, k)});
  }
  outputs.add("leader_control.csv", table.serialize());

  json trace;
  trace["cost_history"] = result.cost_history;
  trace["gradient_norms"] = result.gradient_norms;
  trace["iterations"] = result.iterations;
  trace["converged"] = result.converged;
  trace["consistency"] = {{"forward_state", diag.forward_state},
                          {"backward_p1", diag.backward_p1},
                          {"backward_K", diag.backward_K},
                          {"forward_phi", diag.forward_phi},
                          {"stationarity", diag.stationarity},
                          {"headline", diag.headline}};
  outputs.add("leader_descent.json", trace.dump(2) + "\n");
  outputs.stage("leader", {{"iterations", result.iterations}, {"converged", result.converged}});
}

void run_unicycle(const json& config, const RngSpec& rng, RunOutputs& outputs) {
  (void)rng;
  const TimeGrid grid = grid_from(config);
  UnicycleParams params = params_from(config);
  UnicycleParams bvp_params = params;
  bvp_params.sigma = 0.0;  // the control-center design is deterministic
  const json solver = config.value("solver", json::object());
  LeaderBvpSolution bvp =
      solve_unicycle_leader_bvp(bvp_params, grid, jget(solver, "tol", 1e-12),
                                jget_int(solver, "max_iter", 2000));
  AprioriBoundsReport bounds = check_apriori_bounds(bvp, bvp_params);

  CsvTable table;
  table.header = {"t", "x", "y", "theta", "u0", "ui", "p13", "K13"};
  for (int k = 0; k < grid.n_nodes(); ++k) {
    const double p13 = bvp.p.data()(2, k);
    table.add_row({grid.node(k), bvp.state.data()(0, k), bvp.state.data()(1, k),
                   bvp.state.data()(2, k), bvp.u0[k], -p13 / (2.0 * params.d1), p13,
                   bvp.K.data()(2, k)});
  }
  outputs.add("unicycle_trajectory.csv", table.serialize());

  double stationarity = 0.0;
  for (int k = 0; k < grid.n_nodes(); ++k) {
    stationarity =
        std::max(stationarity, std::abs(bvp.K.data()(2, k) + 2.0 * params.d0 * bvp.u0[k]));
  }
  json summary;
  summary["sweeps"] = bvp.sweeps;
  summary["converged"] = bvp.converged;
  summary["used_shooting"] = bvp.used_shooting;
  summary["leader_cost"] = bvp.leader_cost;
  summary["stationarity_max"] = stationarity;
  summary["bounds"] = {{"pass", bounds.pass()},
                       {"worst_margin", bounds.worst_margin},
                       {"witness_node", bounds.witness_node},
                       {"witness_quantity", bounds.witness_quantity}};
  outputs.add("unicycle_summary.json", summary.dump(2) + "\n");
  outputs.stage("unicycle", {{"sweeps", bvp.sweeps},
                             {"converged", bvp.converged},
                             {"used_shooting", bvp.used_shooting}});
}

void run_epsilon_audit(const json& config, const RngSpec& rng, RunOutputs& outputs) {
  const TimeGrid grid = grid_from(config);
  UnicycleParams params = params_from(config);
  const json audit = config.value("audit", json::object());

  // Leader design on the deterministic reduction, audited at the configured
  // sigma.
  UnicycleParams design = params;
  design.sigma = 0.0;
  LeaderBvpSolution bvp = solve_unicycle_leader_bvp(design, grid, 1e-12);
  ControlProfile u0_dagger;
  u0_dagger.values = bvp.u0;

  GameSpec spec = make_unicycle_game(params);
  EnsembleConfig follower_ens;
  follower_ens.n_common = 1;
  follower_ens.n_particles = jget_int(audit, "n_particles", 4000);
  const double follower_tol = jget(audit, "follower_tol", 1e-10);

  AuditInputs inputs = make_audit_inputs(spec, u0_dagger, follower_ens, rng, grid, follower_tol);
  inputs.mc_reps = jget_int(audit, "mc_reps", 1000);
  inputs.budget = jget(audit, "budget", 4.0e9);

  std::vector<double> alt_levels = {0.0};
  if (audit.contains("alternative_levels")) {
    alt_levels = audit.at("alternative_levels").get<std::vector<double>>();
  }
  for (double level : alt_levels) {
    ControlProfile alt = ControlProfile::constant(Vec::Constant(1, level), grid);
    AuditInputs alt_inputs = make_audit_inputs(spec, alt, follower_ens, rng, grid, follower_tol);
    AuditAlternative alternative;
    alternative.u0 = alt;
    alternative.policy = std::move(alt_inputs.policy);
    alternative.reference_mean = std::move(alt_inputs.reference_mean);
    alternative.name = "constant:" + format_double(level);
    inputs.alternatives.push_back(std::move(alternative));
  }
  std::vector<double> dev_levels = {0.0};
  if (audit.contains("deviation_levels")) {
    dev_levels = audit.at("deviation_levels").get<std::vector<double>>();
  }
  for (double level : dev_levels) {
    DeviationSpec dev;
    dev.control = ControlProfile::constant(Vec::Constant(1, level), grid);
    dev.name = "constant:" + format_double(level);
    inputs.deviations.push_back(std::move(dev));
  }

  std::vector<int> ladder = {8, 32, 128};
  if (audit.contains("ladder")) ladder = audit.at("ladder").get<std::vector<int>>();

  EpsilonReport report = epsilon_curves(inputs, ladder, grid);

  CsvTable table;
  table.header = {"N", "gap", "stderr", "quantity"};
  auto emit = [&table](int n, const GapEstimate& g, const std::string& tag) {
    table.rows.push_back({std::to_string(n), format_double(g.value),
                          format_double(g.standard_error), tag});
  };
  for (const auto& r : report.records) {
    emit(r.n_followers, r.follower_gap, "follower_gap");
    emit(r.n_followers, r.deviation_gain, "deviation_gain");
    emit(r.n_followers, r.leader_gap, "leader_gap");
    emit(r.n_followers, r.leader_alt_excess, "leader_alt_excess");
    emit(r.n_followers, r.chaos_gap, "chaos_gap");
  }
  outputs.add("epsilon_gaps.csv", table.serialize());

  json jreport;
  jreport["notes"] = report.notes;
  if (report.chaos_slope) jreport["chaos_slope"] = *report.chaos_slope;
  if (report.follower_slope) jreport["follower_slope"] = *report.follower_slope;
  jreport["records"] = json::array();
  for (const auto& r : report.records) {
    auto gap_json = [](const GapEstimate& g) {
      return json{{"value", g.value}, {"stderr", g.standard_error}, {"reps", g.reps}};
    };
    jreport["records"].push_back({{"N", r.n_followers},
                                  {"follower_gap", gap_json(r.follower_gap)},
                                  {"deviation_gain", gap_json(r.deviation_gain)},
                                  {"leader_gap", gap_json(r.leader_gap)},
                                  {"leader_alt_excess", gap_json(r.leader_alt_excess)},
                                  {"chaos_gap", gap_json(r.chaos_gap)}});
  }
  outputs.add("epsilon_report.json", jreport.dump(2) + "\n");
  outputs.stage("epsilon-audit", {{"ladder", ladder}, {"mc_reps", inputs.mc_reps}});
}

void run_validate(const json& config, const RngSpec& rng, RunOutputs& outputs) {
  const UnicycleParams params = params_from(config);
  const json v = config.value("validate", json::object());
  GameSpec spec = make_unicycle_game(params);
  AssumptionBox box;
  const double radius = jget(v, "box_radius", 1.0);
  box.xi = radius * M_PI;
  box.ui = radius;
  box.u0 = radius;
  box.z = radius;
  box.p = radius * 10.0;
  box.t_max = params.T;
  AssumptionReport report = validate_assumptions(spec, box, jget_int(v, "samples", 1000), rng);

  json out;
  out["all_pass"] = report.all_pass;
  out["samples"] = report.samples;
  out["box"] = {{"xi", box.xi}, {"ui", box.ui}, {"u0", box.u0},
                {"z", box.z},   {"p", box.p},   {"t_max", box.t_max}};
  auto entry_json = [](const CheckEntry& e) {
    return json{{"name", e.name}, {"pass", e.pass}, {"worst", e.worst}, {"detail", e.detail}};
  };
  out["derivative_checks"] = json::array();
  for (const auto& e : report.derivative_checks) out["derivative_checks"].push_back(entry_json(e));
  out["growth_checks"] = json::array();
  for (const auto& e : report.growth_checks) out["growth_checks"].push_back(entry_json(e));
  out["stationarity"] = entry_json(report.stationarity);
  out["projection"] = entry_json(report.projection);
  outputs.add("assumption_report.json", out.dump(2) + "\n");
  outputs.stage("validate", {{"all_pass", report.all_pass}});
}

}  // namespace

int run_scenario(const ScenarioConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    static const std::set<std::string> kCommands = {"solve-fbsde", "follower", "leader",
                                                    "unicycle", "epsilon-audit", "validate"};
    if (!kCommands.count(config.command)) {
      throw ConfigError("unknown command '" + config.command + "'");
    }
    json scenario = json::object();
    if (!config.scenario_file.empty()) {
      scenario = json::parse(read_text_file(config.scenario_file), nullptr, true);
    }
    for (const auto& [key, value] : config.overrides) apply_override(scenario, key, value);
    check_keys(scenario, "");
    if (config.out_dir.empty()) throw ConfigError("missing output directory (--out)");

    RngSpec rng{config.seed};
    RunOutputs outputs;
    if (config.command == "solve-fbsde") {
      run_solve_fbsde(scenario, rng, outputs);
    } else if (config.command == "follower") {
      run_follower(scenario, rng, outputs);
    } else if (config.command == "leader") {
      run_leader(scenario, rng, outputs);
    } else if (config.command == "unicycle") {
      run_unicycle(scenario, rng, outputs);
    } else if (config.command == "epsilon-audit") {
      run_epsilon_audit(scenario, rng, outputs);
    } else if (config.command == "validate") {
      run_validate(scenario, rng, outputs);
    }
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_outputs(config, scenario, outputs, wall);
    return exit_code::kOk;
  } catch (const BudgetError& err) {
    std::cerr << "budget error: " << err.what() << "\n";
    return exit_code::kBudget;
  } catch (const DivergenceError& err) {
    std::cerr << "solver divergence: " << err.what() << "\n";
    return exit_code::kDivergence;
  } catch (const ConfigError& err) {
    std::cerr << "configuration error: " << err.what() << "\n";
    return exit_code::kConfig;
  } catch (const json::exception& err) {
    std::cerr << "configuration error: " << err.what() << "\n";
    return exit_code::kConfig;
  }
}

}  // namespace mfsg
