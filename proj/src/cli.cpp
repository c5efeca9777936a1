#include "ksrs/cli.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ksrs/engine.hpp"
#include "ksrs/experiments.hpp"
#include "ksrs/netmodel.hpp"
#include "ksrs/parallel.hpp"
#include "ksrs/policy.hpp"
#include "ksrs/version.hpp"

namespace ksrs {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };

LogLevel log_level() {
  const char* env = std::getenv("KSRS_LOG");
  if (!env) return LogLevel::kError;
  const std::string v = env;
  if (v == "debug") return LogLevel::kDebug;
  if (v == "info") return LogLevel::kInfo;
  return LogLevel::kError;
}

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::kInfo) std::cerr << "[ksrs] " << msg << "\n";
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string cell(const json& v) {
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
  if (v.is_number_float()) return fmt_double(v.get<double>());
  if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

void write_csv(const fs::path& path, const json& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  const auto& cols = table.at("columns");
  for (std::size_t i = 0; i < cols.size(); ++i)
    out << cols[i].get<std::string>() << (i + 1 < cols.size() ? "," : "\n");
  for (const auto& row : table.at("rows")) {
    for (std::size_t i = 0; i < row.size(); ++i)
      out << cell(row[i]) << (i + 1 < row.size() ? "," : "\n");
  }
}

// Writes result.json plus one CSV per table into dir, filling the artifact
// list first so the JSON references everything it shipped with.
void write_artifacts(ExperimentResult& result, const fs::path& dir, const json& config) {
  fs::create_directories(dir);
  for (const auto& [name, table] : result.tables) {
    const fs::path p = dir / (name + ".csv");
    write_csv(p, table);
    result.artifacts.push_back(p.string());
  }
  result.artifacts.push_back((dir / "result.json").string());
  json j = result.to_json();
  j["config"] = config;
  std::ofstream out(dir / "result.json");
  out << j.dump(2) << "\n";
}

void summary_line(const ExperimentResult& result, const fs::path& dir,
                  const std::string& extra) {
  std::cout << result.name << " regime=" << result.regime;
  if (!extra.empty()) std::cout << " " << extra;
  std::cout << " -> " << (dir / "result.json").string() << "\n";
}

std::vector<std::int64_t> parse_state4(const std::vector<std::int64_t>& v,
                                       const char* what) {
  if (v.size() != 4)
    throw CLI::ValidationError(std::string(what) + " needs exactly four components");
  return v;
}

// Shared flags bound by every experiment subcommand.
struct CommonOpts {
  std::string output_dir = "runs";
  std::string run_name;
  std::uint64_t seed = 1;
  unsigned threads = default_threads();
  std::uint64_t event_cap = kDefaultEventCap;
  std::string config_path;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--output-dir", o.output_dir, "artifact directory root");
  cmd->add_option("--name", o.run_name, "run name (default: subcommand)");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--threads", o.threads, "worker threads (results independent of this)");
  cmd->add_option("--event-cap", o.event_cap, "hard per-run event cap");
  cmd->add_option("--config", o.config_path, "JSON config file; explicit flags override");
}

fs::path run_dir(const CommonOpts& o, const std::string& sub) {
  return fs::path(o.output_dir) / (o.run_name.empty() ? sub : o.run_name);
}

// Pulls defaults from a JSON config file: any key not given on the command
// line is injected as --key=value before parsing.
std::vector<std::string> apply_config_file(const std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw CLI::ValidationError("config file not found: " + path);
  json cfg = json::parse(in);
  if (!cfg.is_object()) throw CLI::ValidationError("config file must hold a JSON object");

  auto given = [&](const std::string& key) {
    const std::string flag = "--" + key;
    for (std::size_t i = 1; i < args.size(); ++i)
      if (args[i] == flag || args[i].rfind(flag + "=", 0) == 0) return true;
    return false;
  };

  std::vector<std::string> out;
  out.push_back(args[0]);
  for (const auto& [key, value] : cfg.items()) {
    if (given(key)) continue;
    std::string v;
    if (value.is_string())
      v = value.get<std::string>();
    else if (value.is_array()) {
      for (std::size_t i = 0; i < value.size(); ++i)
        v += (i ? "," : "") + cell(value[i]);
    } else
      v = cell(value);
    out.push_back("--" + key + "=" + v);
  }
  for (std::size_t i = 1; i < args.size(); ++i) out.push_back(args[i]);
  return out;
}

json common_config(const CommonOpts& o) {
  return json{{"seed", o.seed},
              {"threads", o.threads},
              {"event-cap", o.event_cap},
              {"output-dir", o.output_dir}};
}

int run_params(double delta, const CommonOpts& o, bool write_dir) {
  const PolicyParams p = derive_params(delta);
  json j = to_json(p);
  j["network"] = to_json(build_ksrs(p));
  j["version"] = kVersion;
  std::cout << j.dump(2) << "\n";
  if (write_dir) {
    const fs::path dir = run_dir(o, "params");
    fs::create_directories(dir);
    std::ofstream out(dir / "params.json");
    out << j.dump(2) << "\n";
  }
  return 0;
}

int run_psi(double delta, std::int64_t k_max, const CommonOpts& o) {
  const PolicyParams p = derive_params(delta);
  ExperimentResult result;
  result.name = "psi";
  result.seed = o.seed;
  result.params = to_json(p);
  result.network = to_json(build_ksrs(p));
  result.regime = regime_name(regime(p));

  json table = json{{"columns", {"k", "psi_k", "running_product", "closed_form", "rel_err"}},
                    {"rows", json::array()}};
  double prod = 1.0;
  double max_rel_err = 0.0;
  const double ln_ps1 = ln_psi_star(1.0, p);
  for (std::int64_t k = 1; k <= k_max; ++k) {
    // product of psi(1..k-1) against the closed form Psi*(1)/Psi*(k)
    const double closed = std::exp(ln_ps1 - ln_psi_star(static_cast<double>(k), p));
    const double rel = std::abs(prod - closed) / closed;
    max_rel_err = std::max(max_rel_err, rel);
    const double psi_k = psi_seq(k, p);
    table["rows"].push_back({k, psi_k, prod, closed, rel});
    prod *= psi_k;
  }
  result.tables["psi"] = std::move(table);
  result.add_derived("max_rel_err", max_rel_err);
  result.add_derived("k_max", static_cast<double>(k_max));

  const fs::path dir = run_dir(o, "psi");
  json cfg = common_config(o);
  cfg["delta"] = delta;
  cfg["k-max"] = k_max;
  write_artifacts(result, dir, cfg);
  summary_line(result, dir, "max_rel_err=" + fmt_double(max_rel_err));
  return 0;
}

int run_simulate(double delta, const std::vector<std::int64_t>& init, double horizon,
                 std::uint64_t log_cap, std::size_t grid_points, const CommonOpts& o) {
  const PolicyParams p = derive_params(delta);
  const NetworkSpec spec = build_ksrs(p);
  const auto q0 = parse_state4(init, "--init");
  Simulator sim(spec, p, QState{{q0[0], q0[1], q0[2], q0[3]}}, o.seed,
                stream_id(streams::kSimulate), 0);
  const Trajectory traj = sim.run_until_time(horizon, log_cap, grid_points ? grid_points : 1024);

  ExperimentResult result;
  result.name = "simulate";
  result.seed = o.seed;
  result.params = to_json(p);
  result.network = to_json(spec);
  result.regime = regime_name(regime(p));
  result.replications = 1;

  json table = json{{"columns", {"t", "q1", "q2", "q3", "q4", "kind", "flushed1", "flushed3"}},
                    {"rows", json::array()}};
  for (const auto& ev : traj.events)
    table["rows"].push_back({ev.t, ev.state_after.q[0], ev.state_after.q[1],
                             ev.state_after.q[2], ev.state_after.q[3],
                             event_kind_name(ev.kind), ev.flushed1, ev.flushed3});
  result.tables["trajectory"] = std::move(table);
  if (traj.log_truncated) {
    result.warnings.push_back("event log truncated at cap; grid samples cover the horizon");
    json grid = json{{"columns", {"t", "q1", "q2", "q3", "q4"}}, {"rows", json::array()}};
    for (const auto& [t, s] : traj.grid)
      grid["rows"].push_back({t, s.q[0], s.q[1], s.q[2], s.q[3]});
    result.tables["trajectory_grid"] = std::move(grid);
  }
  result.add_derived("events", static_cast<double>(traj.total_events));
  result.add_derived("final_t", traj.final_t);
  result.add_derived("busy2", traj.busy[0]);
  result.add_derived("busy4", traj.busy[1]);
  for (int i = 0; i < 4; ++i)
    result.add_derived("final_q" + std::to_string(i + 1),
                       static_cast<double>(traj.final_state.q[static_cast<std::size_t>(i)]));
  result.add_derived("skip_free_violations", static_cast<double>(sim.skip_free_violations()));
  result.add_derived("stability_violations", static_cast<double>(sim.stability_violations()));

  const fs::path dir = run_dir(o, "simulate");
  json cfg = common_config(o);
  cfg["delta"] = delta;
  cfg["init"] = q0;
  cfg["horizon"] = horizon;
  cfg["max-events"] = log_cap;
  write_artifacts(result, dir, cfg);
  summary_line(result, dir, "events=" + std::to_string(traj.total_events));
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& raw_args) {
  CLI::App app{"four-buffer queueing network simulator and experiment driver"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  // params
  auto* c_params = app.add_subcommand("params", "print derived policy constants as JSON");
  double pa_delta = 0.1;
  CommonOpts pa_common;
  c_params->add_option("--delta", pa_delta, "load knob, 0 < delta < 1/2")->required();
  add_common(c_params, pa_common);

  // psi
  auto* c_psi = app.add_subcommand("psi", "weighting-sequence table with telescoping check");
  double ps_delta = 0.1;
  std::int64_t ps_kmax = 1000;
  CommonOpts ps_common;
  c_psi->add_option("--delta", ps_delta)->required();
  c_psi->add_option("--k-max", ps_kmax, "table length");
  add_common(c_psi, ps_common);

  // simulate
  auto* c_sim = app.add_subcommand("simulate", "single trajectory with full event log");
  double si_delta = 0.1;
  std::vector<std::int64_t> si_init{0, 0, 0, 1};
  double si_horizon = 100.0;
  std::uint64_t si_log_cap = kDefaultLogCap;
  std::size_t si_grid = 0;
  CommonOpts si_common;
  c_sim->add_option("--delta", si_delta)->required();
  c_sim->add_option("--init", si_init, "initial buffer contents q1,q2,q3,q4")->delimiter(',');
  c_sim->add_option("--horizon", si_horizon, "simulated time")->required();
  c_sim->add_option("--max-events", si_log_cap, "full-log cap; past it the log thins to a grid");
  c_sim->add_option("--grid-points", si_grid, "grid samples kept alongside the log");
  add_common(c_sim, si_common);

  // mm1
  auto* c_mm1 = app.add_subcommand("mm1", "single-queue emptying-time oracle");
  Mm1Config mm1_cfg;
  CommonOpts mm1_common;
  c_mm1->add_option("--n", mm1_cfg.n, "initial jobs");
  c_mm1->add_option("--mu", mm1_cfg.mu, "service rate (arrivals are unit rate)");
  c_mm1->add_option("--epsilon", mm1_cfg.epsilon, "window half-width");
  c_mm1->add_option("--reps", mm1_cfg.reps);
  add_common(c_mm1, mm1_common);

  // ld
  auto* c_ld = app.add_subcommand("ld", "Poisson deviation-probability decay check");
  PoissonLdConfig ld_cfg;
  CommonOpts ld_common;
  c_ld->add_option("--nu", ld_cfg.nu, "Poisson rate");
  c_ld->add_option("--t-list", ld_cfg.t_list, "horizons")->delimiter(',');
  c_ld->add_option("--epsilon", ld_cfg.epsilon, "relative deviation");
  c_ld->add_option("--reps", ld_cfg.reps);
  add_common(c_ld, ld_common);

  // drain
  auto* c_drain = app.add_subcommand("drain", "buffer-4 drain acceptance experiment");
  DrainConfig drain_cfg;
  CommonOpts drain_common;
  c_drain->add_option("--delta", drain_cfg.delta)->required();
  c_drain->add_option("--n", drain_cfg.n, "initial buffer-4 content");
  c_drain->add_option("--epsilon", drain_cfg.epsilon, "acceptance fraction of n");
  c_drain->add_option("--reps", drain_cfg.reps);
  add_common(c_drain, drain_common);

  // holds
  auto* c_holds = app.add_subcommand("holds", "hold-survival vs thinning oracle");
  HoldsConfig holds_cfg;
  CommonOpts holds_common;
  c_holds->add_option("--delta", holds_cfg.delta)->required();
  c_holds->add_option("--x4-list", holds_cfg.x4_list)->delimiter(',');
  c_holds->add_option("--reps", holds_cfg.reps);
  add_common(c_holds, holds_common);

  // cascade
  auto* c_cascade = app.add_subcommand("cascade", "drain-and-refill event probabilities");
  CascadeConfig cas_cfg;
  std::string cas_stage = "e4e1";
  CommonOpts cas_common;
  c_cascade->add_option("--delta", cas_cfg.delta)->required();
  c_cascade->add_option("--x4", cas_cfg.x4, "initial buffer-4 content");
  c_cascade->add_option("--epsilon", cas_cfg.epsilon, "window parameter, in (0, 1/10)");
  c_cascade->add_option("--reps", cas_cfg.reps);
  c_cascade->add_option("--stage", cas_stage)->check(CLI::IsMember({"e4e1", "full"}));
  c_cascade->add_flag("--state-only", cas_cfg.state_only,
                      "report the emptiness-only detector (windows off)");
  add_common(c_cascade, cas_common);

  // tail
  auto* c_tail = app.add_subcommand("tail", "long-run occupation, ccdf and sup-ratio");
  TailConfig tail_cfg;
  std::vector<std::int64_t> tail_atom{0, 0, 0, 1};
  CommonOpts tail_common;
  c_tail->add_option("--delta", tail_cfg.delta)->required();
  c_tail->add_option("--events", tail_cfg.total_events, "event budget");
  c_tail->add_option("--burn-in", tail_cfg.burn_in, "events discarded up front");
  c_tail->add_option("--atom", tail_atom, "regeneration state")->delimiter(',');
  add_common(c_tail, tail_common);

  // drift
  auto* c_drift = app.add_subcommand("drift", "embedded-chain potential growth and drift");
  DriftConfig drift_cfg;
  std::vector<std::int64_t> drift_norms{5, 10, 20, 40};
  CommonOpts drift_common;
  c_drift->add_option("--delta", drift_cfg.delta)->required();
  c_drift->add_option("--p", drift_cfg.p, "moment order, 1 or 2");
  c_drift->add_option("--t-mult", drift_cfg.t_mult, "embedded steps per unit of norm");
  c_drift->add_option("--norms", drift_norms, "start norms along the buffer-4 direction")
      ->delimiter(',');
  c_drift->add_option("--inner-reps", drift_cfg.inner_reps);
  add_common(c_drift, drift_common);

  // fluid
  auto* c_fluid = app.add_subcommand("fluid", "scaled drain vs the fluid prediction");
  FluidConfig fluid_cfg;
  CommonOpts fluid_common;
  c_fluid->add_option("--delta", fluid_cfg.delta)->required();
  c_fluid->add_option("--kappas", fluid_cfg.kappa_list)->delimiter(',');
  c_fluid->add_option("--reps", fluid_cfg.reps);
  c_fluid->add_option("--t-end", fluid_cfg.t_end, "scaled horizon (default 0.9/(mu-1))");
  c_fluid->add_option("--grid-points", fluid_cfg.grid_points);
  add_common(c_fluid, fluid_common);

  std::vector<std::string> args;
  try {
    args = apply_config_file(raw_args);
  } catch (const CLI::Error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "config file error: " << e.what() << "\n";
    return 2;
  }

  try {
    app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (c_params->parsed()) {
      log_info("params delta=" + fmt_double(pa_delta));
      return run_params(pa_delta, pa_common,
                        c_params->count("--output-dir") > 0 || c_params->count("--name") > 0);
    }
    if (c_psi->parsed()) {
      log_info("psi table k_max=" + std::to_string(ps_kmax));
      return run_psi(ps_delta, ps_kmax, ps_common);
    }
    if (c_sim->parsed())
      return run_simulate(si_delta, si_init, si_horizon, si_log_cap, si_grid, si_common);

    ExperimentResult result;
    fs::path dir;
    json cfg;
    std::string extra;
    if (c_mm1->parsed()) {
      mm1_cfg.seed = mm1_common.seed;
      mm1_cfg.threads = mm1_common.threads;
      result = mm1_emptying_oracle(mm1_cfg);
      dir = run_dir(mm1_common, "mm1");
      cfg = common_config(mm1_common);
      cfg["n"] = mm1_cfg.n;
      cfg["mu"] = mm1_cfg.mu;
      cfg["epsilon"] = mm1_cfg.epsilon;
      cfg["reps"] = mm1_cfg.reps;
      extra = "mean_T=" + fmt_double(result.estimates.at("mean_T"));
    } else if (c_ld->parsed()) {
      ld_cfg.seed = ld_common.seed;
      ld_cfg.threads = ld_common.threads;
      result = poisson_ld_check(ld_cfg);
      dir = run_dir(ld_common, "ld");
      cfg = common_config(ld_common);
      cfg["nu"] = ld_cfg.nu;
      cfg["t-list"] = ld_cfg.t_list;
      cfg["epsilon"] = ld_cfg.epsilon;
      cfg["reps"] = ld_cfg.reps;
      if (result.derived.count("fitted_rate"))
        extra = "fitted_rate=" + fmt_double(result.derived.at("fitted_rate"));
    } else if (c_drain->parsed()) {
      drain_cfg.seed = drain_common.seed;
      drain_cfg.threads = drain_common.threads;
      drain_cfg.event_cap = drain_common.event_cap;
      result = drain_experiment(drain_cfg);
      dir = run_dir(drain_common, "drain");
      cfg = common_config(drain_common);
      cfg["delta"] = drain_cfg.delta;
      cfg["n"] = drain_cfg.n;
      cfg["epsilon"] = drain_cfg.epsilon;
      cfg["reps"] = drain_cfg.reps;
      extra = "p_accept=" + fmt_double(result.estimates.at("p_accept"));
    } else if (c_holds->parsed()) {
      holds_cfg.seed = holds_common.seed;
      holds_cfg.threads = holds_common.threads;
      holds_cfg.event_cap = holds_common.event_cap;
      result = hold_event_experiment(holds_cfg);
      dir = run_dir(holds_common, "holds");
      cfg = common_config(holds_common);
      cfg["delta"] = holds_cfg.delta;
      cfg["x4-list"] = holds_cfg.x4_list;
      cfg["reps"] = holds_cfg.reps;
      if (result.derived.count("slope"))
        extra = "slope=" + fmt_double(result.derived.at("slope"));
    } else if (c_cascade->parsed()) {
      cas_cfg.seed = cas_common.seed;
      cas_cfg.threads = cas_common.threads;
      cas_cfg.event_cap = cas_common.event_cap;
      cas_cfg.stage = cas_stage == "full" ? CascadeStage::kFull : CascadeStage::kE4E1;
      result = cascade_experiment(cas_cfg);
      dir = run_dir(cas_common, "cascade");
      cfg = common_config(cas_common);
      cfg["delta"] = cas_cfg.delta;
      cfg["x4"] = cas_cfg.x4;
      cfg["epsilon"] = cas_cfg.epsilon;
      cfg["reps"] = cas_cfg.reps;
      cfg["stage"] = cas_stage;
      cfg["state-only"] = cas_cfg.state_only;
      extra = "p_e4e1=" + fmt_double(result.estimates.at("p_e4e1"));
    } else if (c_tail->parsed()) {
      tail_cfg.seed = tail_common.seed;
      tail_cfg.event_cap = tail_common.event_cap;
      const auto atom = parse_state4(tail_atom, "--atom");
      tail_cfg.atom = QState{{atom[0], atom[1], atom[2], atom[3]}};
      result = tail_occupation(tail_cfg);
      dir = run_dir(tail_common, "tail");
      cfg = common_config(tail_common);
      cfg["delta"] = tail_cfg.delta;
      cfg["events"] = tail_cfg.total_events;
      cfg["burn-in"] = tail_cfg.burn_in;
      cfg["atom"] = atom;
      extra = "moment_p1=" + fmt_double(result.estimates.at("moment_p1"));
    } else if (c_drift->parsed()) {
      drift_cfg.seed = drift_common.seed;
      drift_cfg.threads = drift_common.threads;
      drift_cfg.state_list.clear();
      for (auto n : drift_norms) drift_cfg.state_list.push_back(QState{{0, 0, 0, n}});
      result = drift_estimate(drift_cfg);
      dir = run_dir(drift_common, "drift");
      cfg = common_config(drift_common);
      cfg["delta"] = drift_cfg.delta;
      cfg["p"] = drift_cfg.p;
      cfg["t-mult"] = drift_cfg.t_mult;
      cfg["norms"] = drift_norms;
      cfg["inner-reps"] = drift_cfg.inner_reps;
      if (result.derived.count("growth_exponent"))
        extra = "growth_exponent=" + fmt_double(result.derived.at("growth_exponent"));
    } else if (c_fluid->parsed()) {
      fluid_cfg.seed = fluid_common.seed;
      fluid_cfg.threads = fluid_common.threads;
      result = fluid_experiment(fluid_cfg);
      dir = run_dir(fluid_common, "fluid");
      cfg = common_config(fluid_common);
      cfg["delta"] = fluid_cfg.delta;
      cfg["kappas"] = fluid_cfg.kappa_list;
      cfg["reps"] = fluid_cfg.reps;
      cfg["t-end"] = fluid_cfg.t_end;
      cfg["grid-points"] = fluid_cfg.grid_points;
    } else {
      std::cerr << app.help() << "\n";
      return 2;
    }
    write_artifacts(result, dir, cfg);
    summary_line(result, dir, extra);
    return 0;
  } catch (const CapExceeded& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace ksrs
