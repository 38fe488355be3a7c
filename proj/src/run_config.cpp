#include "fsvie/run_config.hpp"

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "fsvie/dense_oracle.hpp"
#include "fsvie/errors.hpp"
#include "fsvie/forward.hpp"

namespace fsvie {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& why) {
  throw std::invalid_argument("config key '" + key + "': " + why);
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    bad(key, "wrong type");
  }
}

std::vector<std::vector<double>> get_vecvec(const json& j, const std::string& key) {
  std::vector<std::vector<double>> out;
  if (!j.contains(key)) return out;
  try {
    out = j.at(key).get<std::vector<std::vector<double>>>();
  } catch (const json::exception&) {
    bad(key, "expected an array of number arrays");
  }
  return out;
}

}  // namespace

RunConfig parse_config(const json& j) {
  RunConfig c;
  c.experiment = get_or<std::string>(j, "experiment", "");
  if (!j.contains("problem") || !j.at("problem").is_object())
    bad("problem", "required object {name, params}");
  c.problem_name = get_or<std::string>(j.at("problem"), "name", "");
  if (c.problem_name.empty()) bad("problem.name", "required");
  if (j.at("problem").contains("params")) {
    for (auto& [key, value] : j.at("problem").at("params").items()) {
      if (!value.is_number()) bad("problem.params." + key, "must be a number");
      c.problem_params[key] = value.get<double>();
    }
  }
  if (j.contains("grid")) {
    c.horizon = get_or<double>(j.at("grid"), "T", 1.0);
    c.steps = get_or<int>(j.at("grid"), "N", 8);
  }
  if (c.horizon <= 0) bad("grid.T", "must be positive");
  if (c.steps < 1) bad("grid.N", "must be >= 1");
  c.mode = get_or<std::string>(j, "mode", "tree");
  if (c.mode != "tree" && c.mode != "mc") bad("mode", "must be 'tree' or 'mc'");
  c.paths = get_or<int>(j, "paths", c.mode == "tree" ? (1 << std::min(c.steps, 20)) : 4096);
  if (c.mode == "tree" && (c.steps >= 31 || c.paths != (1 << c.steps)))
    bad("paths", "tree mode requires paths = 2^N");
  c.seed = get_or<std::uint64_t>(j, "seed", 42);
  if (j.contains("backend")) {
    const json& b = j.at("backend");
    c.backend = get_or<std::string>(b, "type", "exact");
    c.regression.degree = get_or<int>(b, "degree", 2);
    c.regression.ridge_rel = get_or<double>(b, "ridge", 1e-8);
  }
  if (c.backend != "exact" && c.backend != "regression")
    bad("backend.type", "must be 'exact' or 'regression'");
  if (c.backend == "exact" && c.mode != "tree")
    bad("backend.type", "exact projections require tree mode");
  if (c.mode == "mc" && c.backend != "regression")
    bad("backend.type", "mc mode requires the regression backend");
  c.beta_override = get_or<double>(j, "beta_override", -1.0);

  if (j.contains("control")) {
    const json& u = j.at("control");
    c.control_type = get_or<std::string>(u, "type", "constant");
    if (c.control_type == "constant") {
      c.control_value = get_or<std::vector<double>>(u, "value", {});
      if (c.control_value.empty()) bad("control.value", "required for constant control");
    } else if (c.control_type == "per_step") {
      c.control_per_step = get_vecvec(u, "values");
      if (c.control_per_step.empty()) bad("control.values", "required for per_step control");
    } else {
      bad("control.type", "must be 'constant' or 'per_step'");
    }
  }

  if (j.contains("spike")) {
    const json& s = j.at("spike");
    c.spike.tau_index = get_or<int>(s, "tau_index", c.steps / 4);
    c.spike.widths = get_or<std::vector<int>>(s, "widths", {});
    c.spike.probe = get_or<std::vector<double>>(s, "probe", {});
    c.spike_adjoint_form = get_or<bool>(s, "with_adjoint_form", false);
    c.bootstrap_resamples = get_or<int>(s, "bootstrap", 200);
    int max_w = 0;
    for (int w : c.spike.widths) {
      if (w < 1) bad("spike.widths", "widths must be >= 1");
      max_w = std::max(max_w, w);
    }
    if (c.spike.tau_index < 0 || c.spike.tau_index + max_w > c.steps)
      bad("spike.tau_index", "window exceeds the grid");
  }

  if (j.contains("scan")) {
    const json& s = j.at("scan");
    c.tau_indices = get_or<std::vector<int>>(s, "tau_indices", {});
    c.tolerance = get_or<double>(s, "tolerance", 1e-6);
    c.probes = get_vecvec(s, "probes");
    for (int tau : c.tau_indices)
      if (tau < 0 || tau >= c.steps) bad("scan.tau_indices", "index outside the grid");
  }

  if (j.contains("game")) {
    const json& g = j.at("game");
    c.game_check = get_or<std::string>(g, "check", "nash");
    if (c.game_check != "nash" && c.game_check != "saddle")
      bad("game.check", "must be 'nash' or 'saddle'");
    if (g.contains("player_probes")) {
      try {
        c.player_probes =
            g.at("player_probes").get<std::vector<std::vector<std::vector<double>>>>();
      } catch (const json::exception&) {
        bad("game.player_probes", "expected per-player arrays of probe vectors");
      }
    }
  }
  c.oracle_tol = get_or<double>(j, "oracle_tol", 1e-10);

  // Canonical echo (sorted keys, deterministic) for the audit trail.
  c.resolved = j.dump(2);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

namespace {

ControlProcess build_control(const RunConfig& c, const Problem& problem, int paths) {
  if (c.control_type == "per_step") {
    if (static_cast<int>(c.control_per_step.size()) != c.steps)
      bad("control.values", "needs one entry per grid step");
    return ControlProcess::deterministic(problem.control_dim(), paths, c.control_per_step);
  }
  std::vector<double> value = c.control_value;
  if (value.empty()) value.assign(static_cast<size_t>(problem.control_dim()), 0.0);
  if (static_cast<int>(value.size()) != problem.control_dim())
    bad("control.value", "dimension mismatch with the problem");
  return ControlProcess::constant(problem.control_dim(), paths, c.steps, value);
}

json telemetry_json(const SolveTelemetry& t) {
  return json{{"iterations", t.iterations},
              {"converged", t.converged},
              {"beta", t.beta},
              {"deltas", t.deltas},
              {"ratios", t.ratios}};
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  out << contents;
}

std::string csv_join(const std::vector<std::string>& cells) {
  std::string line;
  for (size_t i = 0; i < cells.size(); ++i) {
    if (i) line += ",";
    line += cells[i];
  }
  return line + "\n";
}

std::string num(double v) {
  char buf[32];
  snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

int run_experiment(const RunConfig& c, const std::string& out_dir) {
  namespace fs = std::filesystem;
  // Re-validate the mode/paths coupling; CLI overrides may have changed it.
  if (c.mode == "tree" && (c.steps >= 31 || c.paths != (1 << c.steps)))
    bad("paths", "tree mode requires paths = 2^N");
  if (c.mode == "mc" && c.backend != "regression")
    bad("backend.type", "mc mode requires the regression backend");
  fs::create_directories(out_dir);

  ParamMap params = c.problem_params;
  params["horizon"] = c.horizon;
  ProblemPtr problem = registry_get(c.problem_name, params);
  TimeGrid grid = make_grid(c.horizon, c.steps);
  NoiseEnsemble noise =
      sample_noise(grid, c.paths, c.mode == "tree" ? NoiseMode::kTree : NoiseMode::kGaussian,
                   c.seed);
  ControlProcess control = build_control(c, *problem, c.paths);

  std::unique_ptr<Filtration> filtration;
  std::unique_ptr<ProjectionBackend> backend;
  std::shared_ptr<StateEnsemble> ref_state;  // regression basis needs the state
  if (c.backend == "exact") {
    filtration = std::make_unique<Filtration>(noise);
    backend = std::make_unique<TreeProjection>(noise, *filtration);
  } else {
    ref_state = std::make_shared<StateEnsemble>(solve_fsvie(*problem, grid, noise, control));
    backend = std::make_unique<RegressionProjection>(noise, *ref_state, c.regression);
  }

  json report;
  report["schema_version"] = 1;
  report["experiment"] = c.experiment;
  report["config"] = json::parse(c.resolved);
  report["seed"] = c.seed;
  json results;
  int status = 0;

  ScanSetup setup;
  setup.tau_indices = c.tau_indices;
  setup.tol = c.tolerance;
  setup.probes = c.probes;
  setup.first_options.beta = c.beta_override;
  setup.second_options.beta = c.beta_override;

  if (c.experiment == "simulate") {
    StateEnsemble state = solve_fsvie(*problem, grid, noise, control);
    CostValue cost = cost_eval(*problem, grid, noise, state, control);
    results["cost"] = cost.value;
    results["cost_std_error"] = cost.std_error;
    std::vector<double> mean_abs(static_cast<size_t>(grid.steps()) + 1, 0.0);
    std::string csv = "k,t,mean_abs_state\n";
    for (int k = 0; k <= grid.steps(); ++k) {
      double acc = 0.0;
      for (int p = 0; p < c.paths; ++p) {
        double s = 0.0;
        for (int i = 0; i < problem->state_dim(); ++i) s += std::abs(state.value(k, p, i));
        acc += noise.weight(p) * s;
      }
      mean_abs[static_cast<size_t>(k)] = acc;
      csv += csv_join({std::to_string(k), num(grid.node(k)), num(acc)});
    }
    results["mean_abs_state"] = mean_abs;
    write_file(fs::path(out_dir) / "state_stats.csv", csv);
  } else if (c.experiment == "adjoint") {
    auto xbar = std::make_shared<StateEnsemble>(solve_fsvie(*problem, grid, noise, control));
    auto uref = std::make_shared<ControlProcess>(control);
    std::vector<double> probe0(static_cast<size_t>(problem->control_dim()), 0.0);
    FrozenCoefficients frozen(problem, grid, xbar, uref, probe0);
    FirstAdjointOptions fo;
    fo.beta = c.beta_override;
    FirstAdjoint first = solve_first_adjoint(frozen, *backend, fo);
    results["first"] = telemetry_json(first.telemetry);
    if (c.mode == "tree") results["first_m_residual"] = first.m_residual(noise);
    SecondAdjointOptions so;
    so.beta = c.beta_override;
    SecondAdjoint second = solve_second_adjoint(frozen, first, *backend, so);
    results["p2"] = telemetry_json(second.p2_telemetry);
    results["outer"] = telemetry_json(second.outer_telemetry);
    if (c.mode == "tree") {
      results["constraint_residual"] = second.constraint_residual(noise);
      results["symmetry_residual"] = second.symmetry_residual();
    }
    std::string csv = "iteration,delta,ratio\n";
    for (size_t i = 0; i < second.outer_telemetry.deltas.size(); ++i)
      csv += csv_join({std::to_string(i + 1), num(second.outer_telemetry.deltas[i]),
                       i ? num(second.outer_telemetry.ratios[i - 1]) : "nan"});
    write_file(fs::path(out_dir) / "telemetry.csv", csv);
  } else if (c.experiment == "spike-sweep") {
    if (c.spike.widths.empty()) bad("spike.widths", "required for spike-sweep");
    if (static_cast<int>(c.spike.probe.size()) != problem->control_dim())
      bad("spike.probe", "dimension mismatch with the problem");
    SpikeOptions opts;
    opts.with_adjoint_form = c.spike_adjoint_form;
    opts.bootstrap_resamples = c.bootstrap_resamples;
    opts.first_options.beta = c.beta_override;
    opts.second_options.beta = c.beta_override;
    SpikeReport rep = expansion_report(problem, grid, noise, control, c.spike, *backend, opts);
    json rows = json::array();
    std::string csv =
        "w,eps,jdiff,jdiff_se,dh_term,e_direct,e_adjoint,residual38,mom_dx,mom_dx1,mom_x2,"
        "mom_dx12\n";
    for (const auto& r : rep.rows) {
      rows.push_back({{"w", r.width},
                      {"eps", r.eps},
                      {"jdiff", r.j_diff},
                      {"jdiff_se", r.j_diff_se},
                      {"dh_term", r.dh_term},
                      {"e_direct", r.e_direct},
                      {"e_adjoint", r.has_adjoint_form ? json(r.e_adjoint) : json()},
                      {"residual38", r.residual38},
                      {"mom_dx", r.mom_dx},
                      {"mom_dx1", r.mom_dx1},
                      {"mom_x2", r.mom_x2},
                      {"mom_dx12", r.mom_dx12}});
      csv += csv_join({std::to_string(r.width), num(r.eps), num(r.j_diff), num(r.j_diff_se),
                       num(r.dh_term), num(r.e_direct),
                       r.has_adjoint_form ? num(r.e_adjoint) : "nan", num(r.residual38),
                       num(r.mom_dx), num(r.mom_dx1), num(r.mom_x2), num(r.mom_dx12)});
    }
    results["rows"] = rows;
    auto slope_json = [](const SlopeFit& f) {
      return json{{"slope", f.slope}, {"r2", f.r2}, {"degenerate", f.degenerate}};
    };
    results["slopes"] = {{"dx", slope_json(rep.slope_dx)},
                         {"dx1", slope_json(rep.slope_dx1)},
                         {"x2", slope_json(rep.slope_x2)},
                         {"dx12", slope_json(rep.slope_dx12)},
                         {"residual38", slope_json(rep.slope_res38)}};
    if (rep.se_slope_dx) {
      results["slope_std_errors"] = {{"dx", *rep.se_slope_dx},
                                     {"dx1", *rep.se_slope_dx1},
                                     {"x2", *rep.se_slope_x2},
                                     {"dx12", *rep.se_slope_dx12},
                                     {"residual38", *rep.se_slope_res38}};
    }
    write_file(fs::path(out_dir) / "sweep.csv", csv);
  } else if (c.experiment == "mp-check") {
    if (setup.tau_indices.empty()) bad("scan.tau_indices", "required for mp-check");
    MpScanResult scan = mp_scan(problem, grid, noise, *backend, control, setup);
    results["min_lhs"] = scan.min_lhs;
    results["violations"] = scan.violations.size();
    results["verdict"] = scan.pass ? "PASS" : "FAIL";
    json entries = json::array();
    std::string csv = "tau,probe,lhs\n";
    for (const auto& e : scan.entries) {
      entries.push_back({{"tau", e.tau_index}, {"probe", e.probe}, {"lhs", e.lhs}});
      std::string probe_str;
      for (size_t i = 0; i < e.probe.size(); ++i)
        probe_str += (i ? ";" : "") + num(e.probe[i]);
      csv += csv_join({std::to_string(e.tau_index), probe_str, num(e.lhs)});
    }
    results["entries"] = entries;
    write_file(fs::path(out_dir) / "scan.csv", csv);
    if (!scan.pass) status = 2;
  } else if (c.experiment == "game-check") {
    if (setup.tau_indices.empty()) bad("scan.tau_indices", "required for game-check");
    if (c.game_check == "nash") {
      auto probes = c.player_probes;
      if (probes.empty()) bad("game.player_probes", "required for nash check");
      auto scans = nash_check(problem, grid, noise, *backend, control, probes, setup);
      json players = json::array();
      bool all_pass = true;
      for (size_t l = 0; l < scans.size(); ++l) {
        players.push_back({{"player", l},
                           {"min_lhs", scans[l].min_lhs},
                           {"violations", scans[l].violations.size()},
                           {"verdict", scans[l].pass ? "PASS" : "FAIL"}});
        all_pass = all_pass && scans[l].pass;
        std::string csv = "tau,probe,lhs\n";
        for (const auto& e : scans[l].entries) {
          std::string probe_str;
          for (size_t i = 0; i < e.probe.size(); ++i)
            probe_str += (i ? ";" : "") + num(e.probe[i]);
          csv += csv_join({std::to_string(e.tau_index), probe_str, num(e.lhs)});
        }
        write_file(fs::path(out_dir) / ("scan_player" + std::to_string(l) + ".csv"), csv);
      }
      results["players"] = players;
      results["verdict"] = all_pass ? "PASS" : "FAIL";
      if (!all_pass) status = 2;
    } else {
      if (c.player_probes.size() != 2)
        bad("game.player_probes", "saddle check needs the two players' probe lists");
      SaddleResult res = saddle_check(problem, grid, noise, *backend, control,
                                      c.player_probes[0], c.player_probes[1], setup);
      results["worst_violation"] = res.worst_violation;
      results["verdict"] = res.pass ? "PASS" : "FAIL";
      std::string csv = "tau,side,probe,violation\n";
      for (const auto& e : res.entries) {
        std::string probe_str;
        for (size_t i = 0; i < e.probe.size(); ++i)
          probe_str += (i ? ";" : "") + num(e.probe[i]);
        csv += csv_join({std::to_string(e.tau_index), e.max_side ? "max" : "min", probe_str,
                         num(e.violation)});
      }
      write_file(fs::path(out_dir) / "saddle.csv", csv);
      if (!res.pass) status = 2;
    }
  } else if (c.experiment == "sde-crosscheck") {
    if (setup.tau_indices.empty()) bad("scan.tau_indices", "required for sde-crosscheck");
    SdeCrosscheckReport rep = sde_crosscheck(problem, grid, noise, *backend, control, setup);
    results["max_discrepancy"] = rep.max_discrepancy;
    results["bsde_residual"] = rep.bsde_residual;
    results["verdict"] = rep.max_discrepancy <= c.tolerance ? "PASS" : "FAIL";
    std::string csv = "tau,probe,volterra,classical\n";
    for (const auto& e : rep.entries) {
      std::string probe_str;
      for (size_t i = 0; i < e.probe.size(); ++i)
        probe_str += (i ? ";" : "") + num(e.probe[i]);
      csv += csv_join({std::to_string(e.tau_index), probe_str, num(e.volterra_lhs),
                       num(e.classical_lhs)});
    }
    write_file(fs::path(out_dir) / "crosscheck.csv", csv);
    if (rep.max_discrepancy > c.tolerance) status = 2;
  } else if (c.experiment == "oracle-compare") {
    if (c.mode != "tree") bad("mode", "oracle-compare requires tree mode");
    auto xbar = std::make_shared<StateEnsemble>(solve_fsvie(*problem, grid, noise, control));
    auto uref = std::make_shared<ControlProcess>(control);
    std::vector<double> probe0(static_cast<size_t>(problem->control_dim()), 0.0);
    FrozenCoefficients frozen(problem, grid, xbar, uref, probe0);
    const auto& tp = dynamic_cast<const TreeProjection&>(*backend);
    FirstAdjoint first = solve_first_adjoint(frozen, *backend);
    SecondAdjoint second = solve_second_adjoint(frozen, first, *backend);
    const std::vector<double> y_dense = dense_solve_y(frozen, tp);
    const std::vector<double> p2_dense = dense_solve_p2(frozen, tp, second);
    SecondAdjointSources sources = build_sources(frozen, first, second, *backend);
    DenseP3P4 dense34 = dense_solve_p3_p4(frozen, sources, tp);
    auto max_diff = [](const double* a, const double* b, size_t count) {
      double m = 0.0;
      for (size_t i = 0; i < count; ++i) m = std::max(m, std::abs(a[i] - b[i]));
      return m;
    };
    const int n = problem->state_dim();
    const size_t vb = static_cast<size_t>(c.paths) * n;
    const size_t mb = vb * n;
    double dy = 0.0, dp2 = 0.0, dp3 = 0.0, dp4 = 0.0;
    for (int k = 0; k < grid.steps(); ++k) {
      dy = std::max(dy, max_diff(first.y(k), y_dense.data() + vb * k, vb));
      dp2 = std::max(dp2, max_diff(second.p2(k), p2_dense.data() + mb * k, mb));
      dp4 = std::max(dp4, max_diff(second.p4(k), dense34.p4.data() + mb * k, mb));
    }
    for (int s = 1; s < grid.steps(); ++s)
      for (int r = 0; r < s; ++r)
        dp3 = std::max(dp3, max_diff(second.p3_stored(s, r),
                                     dense34.p3.data() +
                                         SecondAdjointSources::tri_cell(s, r) * mb,
                                     mb));
    results["max_abs_diff"] = {{"y", dy}, {"p2", dp2}, {"p3", dp3}, {"p4", dp4}};
    results["tolerance"] = c.oracle_tol;
    const bool pass = dy <= c.oracle_tol && dp2 <= c.oracle_tol && dp3 <= c.oracle_tol &&
                      dp4 <= c.oracle_tol;
    results["verdict"] = pass ? "PASS" : "FAIL";
    std::string csv = "field,max_abs_diff\n";
    csv += csv_join({"y", num(dy)});
    csv += csv_join({"p2", num(dp2)});
    csv += csv_join({"p3", num(dp3)});
    csv += csv_join({"p4", num(dp4)});
    write_file(fs::path(out_dir) / "oracle.csv", csv);
    if (!pass) status = 2;
  } else {
    throw std::invalid_argument("unknown experiment '" + c.experiment + "'");
  }

  report["results"] = results;
  report["status"] = status;
  write_file(fs::path(out_dir) / "report.json", report.dump(2) + "\n");
  return status;
}

}  // namespace fsvie
