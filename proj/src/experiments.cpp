#include "ksrs/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "ksrs/parallel.hpp"
#include "ksrs/stats.hpp"
#include "ksrs/version.hpp"

namespace ksrs {

namespace {

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

nlohmann::json make_table(std::vector<std::string> columns) {
  return nlohmann::json{{"columns", std::move(columns)}, {"rows", nlohmann::json::array()}};
}

void stamp(ExperimentResult& r, const PolicyParams& params, const NetworkSpec& spec) {
  r.params = to_json(params);
  r.network = to_json(spec);
  r.regime = regime_name(regime(params));
}

std::string num_key(double v) {
  if (v == std::floor(v) && std::abs(v) < 1e15)
    return std::to_string(static_cast<long long>(v));
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

// Ratio estimator r = sum(Y)/sum(tau) over i.i.d. cycles with the standard
// linearization standard error, from streaming sums only.
struct RatioAcc {
  double n = 0.0;
  double st = 0.0, st2 = 0.0;
  double sy = 0.0, sy2 = 0.0, syt = 0.0;

  void add(double y, double tau) {
    n += 1.0;
    st += tau;
    st2 += tau * tau;
    sy += y;
    sy2 += y * y;
    syt += y * tau;
  }
  double ratio() const { return st > 0.0 ? sy / st : 0.0; }
  double stderr_ratio() const {
    if (n < 2.0 || st <= 0.0) return 0.0;
    const double r = ratio();
    const double ssz = std::max(0.0, sy2 - 2.0 * r * syt + r * r * st2);
    const double tbar = st / n;
    return std::sqrt(ssz / (n - 1.0) / n) / tbar;
  }
};

}  // namespace

void ExperimentResult::add(const std::string& key, double value, double stderr_value) {
  estimates[key] = value;
  stderrs[key] = stderr_value;
}

void ExperimentResult::add_derived(const std::string& key, double value) {
  derived[key] = value;
}

nlohmann::json ExperimentResult::to_json() const {
  return nlohmann::json{{"name", name},
                        {"regime", regime},
                        {"params", params},
                        {"network", network},
                        {"seed", seed},
                        {"replications", replications},
                        {"estimates", estimates},
                        {"stderr", stderrs},
                        {"derived", derived},
                        {"warnings", warnings},
                        {"runtime_seconds", runtime_seconds},
                        {"artifacts", artifacts},
                        {"tables", tables},
                        {"version", kVersion}};
}

ScaledTrajectory fluid_scale(const Trajectory& traj, double kappa,
                             const std::vector<double>& grid) {
  if (!(kappa > 0.0)) throw std::invalid_argument("fluid_scale: kappa must be positive");
  ScaledTrajectory out;
  out.kappa = kappa;
  out.grid = grid;
  for (int i = 0; i < 4; ++i)
    out.x[i] = static_cast<double>(traj.initial.q[static_cast<std::size_t>(i)]) / kappa;

  for (double g : grid)
    if (kappa * g > traj.final_t || g < 0.0)
      throw std::out_of_range("fluid_scale: grid point beyond trajectory horizon");
  if (traj.log_truncated)
    throw std::invalid_argument("fluid_scale: needs an untruncated event log");

  // walk events once; grid must be non-decreasing for the single pass
  std::vector<std::size_t> order(grid.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return grid[a] < grid[b]; });

  out.q_scaled.resize(grid.size());
  out.z_scaled.resize(grid.size());
  QState state = traj.initial;
  std::array<double, 2> busy{0.0, 0.0};
  double t_prev = 0.0;
  std::size_t ev = 0;
  for (std::size_t oi : order) {
    const double target = kappa * grid[oi];
    while (ev < traj.events.size() && traj.events[ev].t <= target) {
      const double dt = traj.events[ev].t - t_prev;
      if (state.q[1] > 0) busy[0] += dt;
      if (state.q[3] > 0) busy[1] += dt;
      t_prev = traj.events[ev].t;
      state = traj.events[ev].state_after;
      ++ev;
    }
    std::array<double, 2> busy_at = busy;
    const double dt = target - t_prev;
    if (state.q[1] > 0) busy_at[0] += dt;
    if (state.q[3] > 0) busy_at[1] += dt;
    for (int i = 0; i < 4; ++i)
      out.q_scaled[oi][static_cast<std::size_t>(i)] =
          static_cast<double>(state.q[static_cast<std::size_t>(i)]) / kappa;
    out.z_scaled[oi] = {busy_at[0] / kappa, busy_at[1] / kappa};
  }
  return out;
}

CascadeWindows cascade_windows(const PolicyParams& params, std::int64_t x4, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 0.1))
    throw std::domain_error("cascade_windows: epsilon must lie in (0, 1/10)");
  if (x4 < 1) throw std::domain_error("cascade_windows: x4 must be >= 1");
  CascadeWindows w;
  w.epsilon = epsilon;
  w.x4 = x4;
  const double x = static_cast<double>(x4);
  const double drain4 = params.mu - 1.0;  // mu4 - 1
  const double drain2 = params.mu - 1.0;  // mu2 - 1, symmetric instance
  const double lo = 1.0 - epsilon, hi = 1.0 + epsilon;
  w.t4_lo = lo * x / drain4;
  w.t4_hi = hi * x / drain4;
  w.q2_lo = lo * lo * x / drain4;
  w.q2_hi = hi * hi * x / drain4;
  w.t24_lo = lo * lo * lo * x / (drain4 * drain2);
  w.t24_hi = hi * hi * hi * x / (drain4 * drain2);
  w.q4_lo = lo * lo * lo * lo * x / (drain4 * drain2);
  w.q4_hi = hi * hi * hi * hi * x / (drain4 * drain2);
  w.cycle_t_lo = params.gamma * x / 2.0;
  w.cycle_t_hi = 2.0 * params.gamma * x;
  w.cycle_ratio_lo = params.gamma24 / (2.0 * params.gamma);
  w.cycle_ratio_hi = 2.0 * params.gamma24 / params.gamma;
  return w;
}

double mm1_emptying_time(std::int64_t n, double mu, RngStream& rng) {
  if (n < 0) throw std::invalid_argument("mm1_emptying_time: negative start");
  std::int64_t q = n;
  double t = 0.0;
  while (q > 0) {
    const double da = rng.exponential(1.0);
    const double ds = rng.exponential(mu);
    if (ds < da) {
      t += ds;
      --q;
    } else {
      t += da;
      ++q;
    }
  }
  return t;
}

ExperimentResult mm1_emptying_oracle(const Mm1Config& cfg) {
  if (!(cfg.mu > 1.0)) throw std::domain_error("mm1: mu must exceed the unit arrival rate");
  if (cfg.n < 1) throw std::domain_error("mm1: n must be >= 1");
  Timer timer;
  ExperimentResult r;
  r.name = "mm1";
  r.seed = cfg.seed;
  r.replications = cfg.reps;

  std::vector<double> t_sample(cfg.reps);
  parallel_for(cfg.reps, cfg.threads, [&](std::uint64_t rep) {
    RngStream rng(cfg.seed, stream_id(streams::kMm1), rep);
    t_sample[rep] = mm1_emptying_time(cfg.n, cfg.mu, rng);
  });

  const double scale = static_cast<double>(cfg.n) / (cfg.mu - 1.0);
  double mean = 0.0;
  std::uint64_t in_window = 0;
  for (double t : t_sample) {
    mean += t;
    const double ratio = t / scale;
    if (ratio > 1.0 - cfg.epsilon && ratio < 1.0 + cfg.epsilon) ++in_window;
  }
  mean /= static_cast<double>(cfg.reps);
  double m2 = 0.0, m4 = 0.0;
  for (double t : t_sample) {
    const double d = t - mean;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  const double nreps = static_cast<double>(cfg.reps);
  const double var = m2 / (nreps - 1.0);
  // distribution-free stderr of the sample variance
  const double se_var = std::sqrt(std::max(0.0, m4 / nreps - var * var) / nreps);
  const double freq = static_cast<double>(in_window) / nreps;

  r.add("mean_T", mean, std::sqrt(var / nreps));
  r.add("var_T", var, se_var);
  r.add("window_freq", freq, binomial_stderr(freq, cfg.reps));
  r.add_derived("expected_mean", scale);

  auto table = make_table({"rep", "T"});
  for (std::uint64_t i = 0; i < cfg.reps; ++i)
    table["rows"].push_back({i, t_sample[i]});
  r.tables["mm1"] = std::move(table);

  r.runtime_seconds = timer.seconds();
  return r;
}

ExperimentResult poisson_ld_check(const PoissonLdConfig& cfg) {
  if (!(cfg.epsilon > 0.0)) throw std::domain_error("ld: epsilon must be positive");
  if (!(cfg.nu > 0.0)) throw std::domain_error("ld: nu must be positive");
  if (cfg.t_list.empty()) throw std::domain_error("ld: empty t list");
  Timer timer;
  ExperimentResult r;
  r.name = "ld";
  r.seed = cfg.seed;
  r.replications = cfg.reps;

  const std::size_t points = cfg.t_list.size();
  std::vector<std::uint64_t> hits(points, 0);
  std::vector<std::vector<std::uint8_t>> outcome(points,
                                                 std::vector<std::uint8_t>(cfg.reps, 0));
  parallel_for(points * cfg.reps, cfg.threads, [&](std::uint64_t idx) {
    const std::size_t pi = static_cast<std::size_t>(idx / cfg.reps);
    const std::uint64_t rep = idx % cfg.reps;
    RngStream rng(cfg.seed, stream_id(streams::kPoissonLd, static_cast<std::uint32_t>(pi)),
                  rep);
    const double t = cfg.t_list[pi];
    const double count = static_cast<double>(rng.poisson_count(cfg.nu * t));
    outcome[pi][rep] = std::abs(count - cfg.nu * t) > cfg.epsilon * t ? 1 : 0;
  });
  for (std::size_t pi = 0; pi < points; ++pi)
    for (std::uint64_t rep = 0; rep < cfg.reps; ++rep) hits[pi] += outcome[pi][rep];

  auto table = make_table({"t", "p_hat", "se", "ci_hi"});
  std::vector<double> xs, ys;
  for (std::size_t pi = 0; pi < points; ++pi) {
    const double p = static_cast<double>(hits[pi]) / static_cast<double>(cfg.reps);
    double ci_hi = wilson_ci(hits[pi], cfg.reps).hi;
    if (hits[pi] == 0) {
      // one-sided 95% bound when no deviation was observed
      ci_hi = 1.0 - std::pow(0.05, 1.0 / static_cast<double>(cfg.reps));
      r.warnings.push_back("zero deviations at t=" + num_key(cfg.t_list[pi]) +
                           "; one-sided CI reported");
    } else {
      xs.push_back(cfg.t_list[pi]);
      ys.push_back(-std::log(p));
    }
    table["rows"].push_back(
        {cfg.t_list[pi], p, binomial_stderr(p, cfg.reps), ci_hi});
    r.add("p_hat_t" + num_key(cfg.t_list[pi]), p, binomial_stderr(p, cfg.reps));
  }
  r.tables["ld"] = std::move(table);

  if (xs.size() >= 2) {
    const LinearFit fit = linear_fit(xs, ys);
    r.add_derived("fitted_rate", fit.slope);
    r.add_derived("fit_r2", fit.r2);
  } else {
    r.warnings.push_back("fewer than two positive estimates; rate fit skipped");
  }

  r.runtime_seconds = timer.seconds();
  return r;
}

ExperimentResult drain_experiment(const DrainConfig& cfg) {
  const PolicyParams params = derive_params(cfg.delta);
  const NetworkSpec spec = build_ksrs(params);
  if (cfg.n < 1) throw std::domain_error("drain: n must be >= 1");
  if (!(cfg.epsilon > 0.0)) throw std::domain_error("drain: epsilon must be positive");
  Timer timer;
  ExperimentResult r;
  r.name = "drain";
  r.seed = cfg.seed;
  r.replications = cfg.reps;
  stamp(r, params, spec);

  const double tau = 1.0 / (params.mu - 1.0);
  const double horizon = tau * static_cast<double>(cfg.n);
  const double accept_bound = cfg.epsilon * static_cast<double>(cfg.n);

  struct Row {
    double t4 = -1.0;
    double norm = 0.0;
    bool accept = false;
  };
  std::vector<Row> rows(cfg.reps);
  parallel_for(cfg.reps, cfg.threads, [&](std::uint64_t rep) {
    Simulator sim(spec, params, QState{{0, 0, 0, cfg.n}}, cfg.seed,
                  stream_id(streams::kDrain), rep);
    QState at_horizon = sim.state();
    double t4 = -1.0;
    std::uint64_t used = 0;
    // run past the horizon if needed so T4 is never censored
    while (sim.time() < horizon || t4 < 0.0) {
      const EventRecord rec = sim.next_event();
      if (++used > cfg.event_cap) throw CapExceeded(used, rec.t, rec.state_after);
      if (rec.t <= horizon) at_horizon = rec.state_after;
      if (t4 < 0.0 && rec.state_after.q[3] == 0) t4 = rec.t;
    }
    Row& row = rows[rep];
    row.t4 = t4;
    row.norm = static_cast<double>(at_horizon.norm1());
    row.accept = row.norm <= accept_bound;
  });

  std::uint64_t accepted = 0;
  RunningStat t4_stat;
  auto table = make_table({"rep", "T4", "norm_at_tau_n", "accept"});
  for (std::uint64_t i = 0; i < cfg.reps; ++i) {
    accepted += rows[i].accept ? 1 : 0;
    if (rows[i].t4 >= 0.0) t4_stat.add(rows[i].t4);
    table["rows"].push_back({i, rows[i].t4, rows[i].norm, rows[i].accept ? 1 : 0});
  }
  r.tables["drain"] = std::move(table);

  const double p = static_cast<double>(accepted) / static_cast<double>(cfg.reps);
  r.add("p_accept", p, binomial_stderr(p, cfg.reps));
  if (t4_stat.count() > 1) r.add("mean_T4", t4_stat.mean(), t4_stat.stderr_mean());
  r.add_derived("tau_n", horizon);
  r.add_derived("accept_bound", accept_bound);

  r.runtime_seconds = timer.seconds();
  return r;
}

ExperimentResult hold_event_experiment(const HoldsConfig& cfg) {
  const PolicyParams params = derive_params(cfg.delta);
  const NetworkSpec spec = build_ksrs(params);
  if (cfg.x4_list.empty()) throw std::domain_error("holds: empty x4 list");
  for (auto x : cfg.x4_list)
    if (x < 1) throw std::domain_error("holds: x4 values must be >= 1");
  Timer timer;
  ExperimentResult r;
  r.name = "holds";
  r.seed = cfg.seed;
  r.replications = cfg.reps;
  stamp(r, params, spec);

  const std::size_t points = cfg.x4_list.size();
  std::vector<std::vector<std::uint8_t>> held(points,
                                              std::vector<std::uint8_t>(cfg.reps, 0));
  std::vector<std::vector<double>> oracle(points, std::vector<double>(cfg.reps, 0.0));

  parallel_for(2 * points * cfg.reps, cfg.threads, [&](std::uint64_t idx) {
    const bool is_oracle = idx >= points * cfg.reps;
    const std::uint64_t sub = is_oracle ? idx - points * cfg.reps : idx;
    const std::size_t pi = static_cast<std::size_t>(sub / cfg.reps);
    const std::uint64_t rep = sub % cfg.reps;
    const std::int64_t x4 = cfg.x4_list[pi];
    if (is_oracle) {
      // independent thinning oracle: M/M/1 drain time, then the held-count
      // survival averaged over an independent unit-rate arrival stream
      RngStream rng(cfg.seed, stream_id(streams::kHoldsOracle, static_cast<std::uint32_t>(pi)),
                    rep);
      const double t_drain = mm1_emptying_time(x4, params.mu, rng);
      const std::uint64_t arrivals = rng.poisson_count(t_drain);
      oracle[pi][rep] = hold_survival(static_cast<std::int64_t>(arrivals), params);
    } else {
      Simulator sim(spec, params, QState{{0, 0, 0, x4}}, cfg.seed,
                    stream_id(streams::kHoldsPolicy, static_cast<std::uint32_t>(pi)), rep);
      bool flushed_before = false;
      std::uint64_t used = 0;
      for (;;) {
        const EventRecord rec = sim.next_event();
        if (++used > cfg.event_cap) throw CapExceeded(used, rec.t, rec.state_after);
        if (rec.state_after.q[3] == 0) break;  // first buffer-4 emptying epoch
        if (rec.flushed1 > 0) flushed_before = true;
      }
      held[pi][rep] = flushed_before ? 0 : 1;
    }
  });

  auto table = make_table({"x4", "p_hat_policy", "p_hat_oracle", "se"});
  std::vector<double> xs, ys;
  double max_abs_z = 0.0;
  for (std::size_t pi = 0; pi < points; ++pi) {
    std::uint64_t hold_count = 0;
    RunningStat oracle_stat;
    for (std::uint64_t rep = 0; rep < cfg.reps; ++rep) {
      hold_count += held[pi][rep];
      oracle_stat.add(oracle[pi][rep]);
    }
    const double p_policy = static_cast<double>(hold_count) / static_cast<double>(cfg.reps);
    const double se_policy = binomial_stderr(p_policy, cfg.reps);
    const double p_oracle = oracle_stat.mean();
    const double se_oracle = oracle_stat.stderr_mean();
    const double se_comb = std::sqrt(se_policy * se_policy + se_oracle * se_oracle);
    const std::string key = std::to_string(cfg.x4_list[pi]);
    r.add("p_policy_" + key, p_policy, se_policy);
    r.add("p_oracle_" + key, p_oracle, se_oracle);
    r.add_derived("z_" + key, se_comb > 0.0 ? (p_policy - p_oracle) / se_comb : 0.0);
    max_abs_z = std::max(max_abs_z, se_comb > 0.0
                                        ? std::abs(p_policy - p_oracle) / se_comb
                                        : 0.0);
    table["rows"].push_back({cfg.x4_list[pi], p_policy, p_oracle, se_comb});
    if (p_policy > 0.0) {
      xs.push_back(ln_psi_star(params.gamma4 * static_cast<double>(cfg.x4_list[pi]), params) -
                   ln_psi_star(1.0, params));
      ys.push_back(-std::log(p_policy));
    }
  }
  r.tables["holds"] = std::move(table);
  r.add_derived("max_abs_z", max_abs_z);
  if (xs.size() >= 2) {
    const LinearFit fit = linear_fit(xs, ys);
    r.add_derived("slope", fit.slope);
    r.add_derived("slope_r2", fit.r2);
  } else {
    r.warnings.push_back("fewer than two positive hold estimates; slope skipped");
  }

  r.runtime_seconds = timer.seconds();
  return r;
}

ExperimentResult cascade_experiment(const CascadeConfig& cfg) {
  const PolicyParams params = derive_params(cfg.delta);
  const NetworkSpec spec = build_ksrs(params);
  const CascadeWindows w = cascade_windows(params, cfg.x4, cfg.epsilon);
  Timer timer;
  ExperimentResult r;
  r.name = "cascade";
  r.seed = cfg.seed;
  r.replications = cfg.reps;
  stamp(r, params, spec);

  struct Flags {
    bool e4 = false, e1 = false, e42 = false, e13 = false;
    bool cycle_window = false, state_only = false;
  };
  std::vector<Flags> out(cfg.reps);

  parallel_for(cfg.reps, cfg.threads, [&](std::uint64_t rep) {
    Simulator sim(spec, params, QState{{0, 0, 0, cfg.x4}}, cfg.seed,
                  stream_id(streams::kCascade), rep);
    std::uint64_t used = 0;
    double t4 = 0.0;
    QState at_t4;
    for (;;) {
      const EventRecord rec = sim.next_event();
      if (++used > cfg.event_cap) throw CapExceeded(used, rec.t, rec.state_after);
      if (rec.state_after.q[3] == 0) {
        t4 = rec.t;
        at_t4 = rec.state_after;
        break;
      }
    }
    Flags& f = out[rep];
    f.e4 = t4 >= w.t4_lo && t4 <= w.t4_hi;
    const double z = static_cast<double>(at_t4.q[1]);
    f.e1 = at_t4.q[0] == 0 && at_t4.q[2] == 0 && z >= w.q2_lo && z <= w.q2_hi;
    if (cfg.stage == CascadeStage::kE4E1) return;

    // second phase: strictly after t4, first buffer-2 emptying epoch
    double t24 = 0.0;
    QState at_t24;
    for (;;) {
      const EventRecord rec = sim.next_event();
      if (++used > cfg.event_cap) throw CapExceeded(used, rec.t, rec.state_after);
      if (rec.state_after.q[1] == 0) {
        t24 = rec.t;
        at_t24 = rec.state_after;
        break;
      }
    }
    const double dt24 = t24 - t4;
    const double q4 = static_cast<double>(at_t24.q[3]);
    f.e42 = dt24 >= w.t24_lo && dt24 <= w.t24_hi;
    f.e13 = at_t24.q[0] == 0 && at_t24.q[2] == 0 && q4 >= w.q4_lo && q4 <= w.q4_hi;
    const double ratio = t24 > 0.0 ? q4 / t24 : 0.0;
    f.cycle_window = t24 >= w.cycle_t_lo && t24 <= w.cycle_t_hi &&
                     at_t24.q[0] == 0 && at_t24.q[2] == 0 &&
                     ratio >= w.cycle_ratio_lo && ratio <= w.cycle_ratio_hi;
    f.state_only = at_t4.q[1] >= 1 && at_t24.q[0] == 0 && at_t24.q[2] == 0 &&
                   at_t24.q[3] >= 1;
  });

  std::uint64_t n_e4 = 0, n_e1 = 0, n_e4e1 = 0, n_full = 0, n_cycle = 0, n_state = 0;
  for (const Flags& f : out) {
    n_e4 += f.e4;
    n_e1 += f.e1;
    n_e4e1 += f.e4 && f.e1;
    n_full += f.e4 && f.e1 && f.e42 && f.e13;
    n_cycle += f.cycle_window;
    n_state += f.state_only;
  }

  const double nreps = static_cast<double>(cfg.reps);
  auto add_detector = [&](const std::string& key, std::uint64_t hits) {
    const double p = static_cast<double>(hits) / nreps;
    r.add("p_" + key, p, binomial_stderr(p, cfg.reps));
    const Interval ci = wilson_ci(hits, cfg.reps);
    r.add_derived("ci_lo_" + key, ci.lo);
    r.add_derived("ci_hi_" + key, ci.hi);
  };
  add_detector("e4", n_e4);
  add_detector("e1", n_e1);
  add_detector("e4e1", n_e4e1);
  if (cfg.stage == CascadeStage::kFull) {
    add_detector("full", n_full);
    add_detector("cycle_window", n_cycle);
    add_detector("state_only_cycle", n_state);
  }

  auto table = make_table({"detector", "hits", "reps", "p_hat", "se", "ci_lo", "ci_hi"});
  auto push = [&](const std::string& key, std::uint64_t hits) {
    const double p = static_cast<double>(hits) / nreps;
    const Interval ci = wilson_ci(hits, cfg.reps);
    table["rows"].push_back({key, hits, cfg.reps, p, binomial_stderr(p, cfg.reps), ci.lo,
                             ci.hi});
  };
  push("e4", n_e4);
  push("e1", n_e1);
  push("e4e1", n_e4e1);
  if (cfg.stage == CascadeStage::kFull) {
    push("full", n_full);
    push("cycle_window", n_cycle);
    push("state_only_cycle", n_state);
  }
  r.tables["cascade"] = std::move(table);

  r.add_derived("window_t4_lo", w.t4_lo);
  r.add_derived("window_t4_hi", w.t4_hi);
  r.add_derived("window_q2_lo", w.q2_lo);
  r.add_derived("window_q2_hi", w.q2_hi);
  if (cfg.state_only && cfg.stage == CascadeStage::kE4E1)
    r.warnings.push_back("state_only requested with stage e4e1; run stage full");

  r.runtime_seconds = timer.seconds();
  return r;
}

CascadeBound cascade_bound(std::int64_t n, double alpha, const PolicyParams& params) {
  if (n < 1) throw std::domain_error("cascade_bound: n must be >= 1");
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw std::domain_error("cascade_bound: alpha must lie in (0,1]");
  CascadeBound b;
  const double ln_alpha = std::log(alpha);
  double per_factor = 0.0;
  double closed = 0.0;
  for (std::int64_t m = 1; m <= n; ++m) {
    const double ln_s = static_cast<double>(m + 1) * params.ln_beta2;
    // per-factor route goes through the evaluated argument while it is
    // representable; beyond that the closed per-term form is exact anyway
    if (ln_s < 700.0)
      per_factor += -2.0 * ln_psi_star(std::exp(ln_s), params);
    else
      per_factor += -0.5 * params.ln_beta1 * (params.ln_beta1 + 2.0 * params.eta * ln_s);
    closed += 0.5 * (params.ln_beta1 * params.ln_beta1 +
                     2.0 * params.eta * static_cast<double>(m + 1) * params.ln_beta1 *
                         params.ln_beta2);
  }
  b.ln_value = static_cast<double>(n) * ln_alpha + per_factor;
  b.ln_value_closed_form = static_cast<double>(n) * ln_alpha - closed;
  b.value = std::exp(b.ln_value);
  const double ln_arg = static_cast<double>(n + 2) * params.ln_beta1;
  b.ln_telescoped_majorant = 0.5 * ln_arg * ln_arg;
  return b;
}

ExperimentResult tail_occupation(const TailConfig& cfg) {
  const PolicyParams params = derive_params(cfg.delta);
  const NetworkSpec spec = build_ksrs(params);
  Timer timer;
  ExperimentResult r;
  r.name = "tail";
  r.seed = cfg.seed;
  r.replications = 1;
  stamp(r, params, spec);

  Simulator sim(spec, params, cfg.atom, cfg.seed, stream_id(streams::kTail), 0);

  std::uint64_t used = 0;
  for (; used < cfg.burn_in && used < cfg.total_events; ++used) sim.next_event();
  // align to the regeneration atom
  while (used < cfg.total_events && !(sim.state() == cfg.atom)) {
    sim.next_event();
    ++used;
  }

  constexpr int kBatches = 64;
  std::vector<NormHistogram> batch_hist(kBatches);
  std::array<double, kBatches> batch_tau{};
  std::array<RatioAcc, 4> moment_acc;          // pooled, p = 1..4
  std::array<std::array<RatioAcc, 4>, 2> half_acc;  // temporal halves
  RunningStat cycle_len;
  std::vector<double> cycle_durations;
  NormHistogram pooled;

  // sup-ratio buckets: 8 per octave over t in [1, horizon)
  constexpr int kPerOctave = 8;
  std::vector<double> bucket_max(8 * 64, 0.0);
  int max_bucket = -1;
  auto bucket_of = [&](double t) {
    return static_cast<int>(std::floor(kPerOctave * std::log2(t)));
  };

  auto table_cycles = make_table({"cycle_id", "duration", "events", "sup_norm"});
  std::uint64_t cycle_id = 0;
  const std::uint64_t half_budget = cfg.total_events / 2;

  std::map<std::int64_t, double> cycle_occ;
  while (used < cfg.total_events) {
    // one regeneration cycle; occupation folds into its round-robin batch
    // only on completion, so a budget-truncated final cycle is discarded
    const int batch = static_cast<int>(cycle_id % kBatches);
    const double t_start = sim.time();
    std::uint64_t cycle_events = 0;
    std::int64_t sup_norm = sim.state().norm1();
    std::array<double, 4> moments{0.0, 0.0, 0.0, 0.0};
    cycle_occ.clear();
    bool complete = false;
    while (used < cfg.total_events) {
      const std::int64_t norm = sim.state().norm1();
      const double t_before = sim.time();
      const EventRecord rec = sim.next_event();
      ++used;
      ++cycle_events;
      if (cycle_events > cfg.event_cap) throw CapExceeded(cycle_events, rec.t, rec.state_after);
      const double dt = rec.t - t_before;
      cycle_occ[norm] += dt;
      double power = static_cast<double>(norm);
      for (int p = 0; p < 4; ++p) {
        moments[static_cast<std::size_t>(p)] += power * dt;
        power *= static_cast<double>(norm);
      }
      // sup over t >= s of norm(t)/t, exact at octave-fraction edges
      if (rec.t > 1.0) {
        const int kb = bucket_of(rec.t);
        const int k_from = t_before <= 1.0 ? 0 : bucket_of(t_before) + 1;
        for (int k = k_from; k <= kb && k < static_cast<int>(bucket_max.size()); ++k) {
          const double edge = std::exp2(static_cast<double>(k) / kPerOctave);
          if (edge > t_before && edge <= rec.t) {
            const double cand = static_cast<double>(norm) / edge;
            bucket_max[static_cast<std::size_t>(k)] =
                std::max(bucket_max[static_cast<std::size_t>(k)], cand);
          }
        }
        if (kb < static_cast<int>(bucket_max.size())) {
          const double cand = static_cast<double>(rec.state_after.norm1()) / rec.t;
          bucket_max[static_cast<std::size_t>(kb)] =
              std::max(bucket_max[static_cast<std::size_t>(kb)], cand);
          max_bucket = std::max(max_bucket, kb);
        }
      }
      sup_norm = std::max(sup_norm, rec.state_after.norm1());
      if (rec.state_after == cfg.atom) {
        complete = true;
        break;
      }
    }
    if (!complete) break;  // budget ran out mid-cycle; partial cycle discarded

    for (const auto& [norm, dt] : cycle_occ) {
      batch_hist[static_cast<std::size_t>(batch)].add(norm, dt);
      pooled.add(norm, dt);
    }
    const double tau = sim.time() - t_start;
    batch_tau[static_cast<std::size_t>(batch)] += tau;
    cycle_len.add(tau);
    cycle_durations.push_back(tau);
    const int half = used <= half_budget ? 0 : 1;
    for (int p = 0; p < 4; ++p) {
      moment_acc[static_cast<std::size_t>(p)].add(moments[static_cast<std::size_t>(p)], tau);
      half_acc[static_cast<std::size_t>(half)][static_cast<std::size_t>(p)].add(
          moments[static_cast<std::size_t>(p)], tau);
    }
    if (cycle_id < cfg.cycle_csv_cap)
      table_cycles["rows"].push_back({cycle_id, tau, cycle_events, sup_norm});
    ++cycle_id;
  }
  r.tables["cycles"] = std::move(table_cycles);

  if (cycle_id < 100)
    r.warnings.push_back("insufficient-cycles: only " + std::to_string(cycle_id) +
                         " completed regeneration cycles; confidence intervals unreliable");

  // occupation + ccdf with batch-ratio confidence intervals
  const int top_bin = pooled.max_used_bin();
  auto ccdf = make_table({"s", "p_hat", "ci_lo", "ci_hi"});
  double batch_total_tau = 0.0;
  for (double v : batch_tau) batch_total_tau += v;
  if (top_bin >= 0 && batch_total_tau > 0.0) {
    std::array<double, kBatches> suffix{};
    for (int i = top_bin; i >= 0; --i) {
      for (int b = 0; b < kBatches; ++b)
        suffix[static_cast<std::size_t>(b)] +=
            batch_hist[static_cast<std::size_t>(b)].weight(i);
      // row for s = lower bound of bin i minus one: P(norm > s) includes bin i
      const std::int64_t s = NormHistogram::bin_lo(i) - 1;
      if (s < 0) continue;
      double sw = 0.0;
      for (double v : suffix) sw += v;
      const double p = sw / batch_total_tau;
      // batch linearization: Z_b = w_b - p * tau_b
      double ssz = 0.0;
      for (int b = 0; b < kBatches; ++b) {
        const double z = suffix[static_cast<std::size_t>(b)] -
                         p * batch_tau[static_cast<std::size_t>(b)];
        ssz += z * z;
      }
      const double tbar = batch_total_tau / kBatches;
      const double se = std::sqrt(ssz / (kBatches - 1) / kBatches) / tbar;
      ccdf["rows"].push_back({s, p, std::max(0.0, p - 1.96 * se), p + 1.96 * se});
    }
  }
  // rows were built from the top bin downward; emit in increasing s
  std::reverse(ccdf["rows"].begin(), ccdf["rows"].end());
  r.tables["ccdf"] = std::move(ccdf);

  auto occupation = make_table({"norm_lo", "norm_hi", "weight"});
  if (top_bin >= 0 && pooled.total() > 0.0)
    for (int i = 0; i <= top_bin; ++i)
      if (pooled.weight(i) > 0.0)
        occupation["rows"].push_back({NormHistogram::bin_lo(i), NormHistogram::bin_hi(i),
                                      pooled.weight(i) / pooled.total()});
  r.tables["occupation"] = std::move(occupation);

  auto supratio = make_table({"s", "sup_ratio"});
  if (max_bucket >= 0) {
    double running = 0.0;
    std::vector<std::pair<double, double>> rows_rev;
    for (int k = max_bucket; k >= 0; --k) {
      running = std::max(running, bucket_max[static_cast<std::size_t>(k)]);
      rows_rev.emplace_back(std::exp2(static_cast<double>(k) / kPerOctave), running);
    }
    for (auto it = rows_rev.rbegin(); it != rows_rev.rend(); ++it)
      supratio["rows"].push_back({it->first, it->second});
  }
  r.tables["supratio"] = std::move(supratio);

  for (int p = 0; p < 4; ++p) {
    const auto& acc = moment_acc[static_cast<std::size_t>(p)];
    r.add("moment_p" + std::to_string(p + 1), acc.ratio(), acc.stderr_ratio());
    for (int h = 0; h < 2; ++h) {
      const auto& ha = half_acc[static_cast<std::size_t>(h)][static_cast<std::size_t>(p)];
      r.add("moment_p" + std::to_string(p + 1) + "_half" + std::to_string(h + 1),
            ha.ratio(), ha.stderr_ratio());
    }
  }
  if (cycle_len.count() > 1)
    r.add("mean_cycle_duration", cycle_len.mean(), cycle_len.stderr_mean());
  if (cycle_durations.size() >= 3)
    r.add_derived("cycle_duration_autocorr1", autocorr_lag1(cycle_durations));
  r.add_derived("cycles", static_cast<double>(cycle_id));
  r.add_derived("events", static_cast<double>(used));
  r.add_derived("total_time", sim.time());
  r.add_derived("occupation_total_time", pooled.total());
  r.add_derived("skip_free_violations", static_cast<double>(sim.skip_free_violations()));
  r.add_derived("stability_violations", static_cast<double>(sim.stability_violations()));

  r.runtime_seconds = timer.seconds();
  return r;
}

ExperimentResult drift_estimate(const DriftConfig& cfg) {
  if (cfg.p != 1 && cfg.p != 2) throw std::domain_error("drift: p must be 1 or 2");
  if (cfg.state_list.empty()) throw std::domain_error("drift: empty state list");
  if (!(cfg.t_mult >= 1.0)) throw std::domain_error("drift: t_mult must be >= 1");
  const PolicyParams params = derive_params(cfg.delta);
  const NetworkSpec spec = build_ksrs(params);
  Timer timer;
  ExperimentResult r;
  r.name = "drift";
  r.seed = cfg.seed;
  r.replications = cfg.inner_reps;
  stamp(r, params, spec);
  if (cfg.inner_reps < 100)
    r.warnings.push_back("variance warning: inner_reps below 100, nested estimate unstable");

  const std::size_t points = cfg.state_list.size();
  const auto pw = [&](std::int64_t norm) {
    const double v = static_cast<double>(norm);
    return cfg.p == 1 ? v : v * v;
  };
  const auto horizon_steps = [&](std::int64_t norm) {
    return static_cast<std::uint64_t>(
        std::llround(cfg.t_mult * static_cast<double>(norm)));
  };

  enum { kValue = 0, kStep = 1, kBoundary = 2 };
  std::vector<std::array<std::vector<double>, 3>> samples(points);
  for (auto& s : samples)
    for (auto& v : s) v.resize(cfg.inner_reps, 0.0);

  parallel_for(3 * points * cfg.inner_reps, cfg.threads, [&](std::uint64_t idx) {
    const int est = static_cast<int>(idx / (points * cfg.inner_reps));
    const std::uint64_t sub = idx % (points * cfg.inner_reps);
    const std::size_t pi = static_cast<std::size_t>(sub / cfg.inner_reps);
    const std::uint64_t rep = sub % cfg.inner_reps;
    const QState x0 = cfg.state_list[pi];
    const std::uint32_t fam = est == kValue     ? streams::kDriftValue
                              : est == kStep    ? streams::kDriftStep
                                                : streams::kDriftBoundary;
    Simulator sim(spec, params, x0, cfg.seed, stream_id(fam, static_cast<std::uint32_t>(pi)),
                  rep);
    const std::int64_t n0 = sim.state().norm1();
    const std::uint64_t h0 = horizon_steps(n0);

    double acc = 0.0;
    if (est == kValue) {
      // V_p: sum over the embedded chain from step 0 through the horizon
      acc = pw(n0);
      for (std::uint64_t t = 1; t <= h0; ++t) acc += pw(sim.next_event().state_after.norm1());
    } else if (est == kStep) {
      // one-step expectation: resample a successor, then its own V_p sum
      const std::int64_t n1 = sim.next_event().state_after.norm1();
      const std::uint64_t h1 = horizon_steps(n1);
      acc = pw(n1);
      for (std::uint64_t t = 1; t <= h1; ++t) acc += pw(sim.next_event().state_after.norm1());
    } else {
      // boundary term of the exact rearrangement: the horizon difference sum
      // along a single path, signed by whether the first move went up
      const std::int64_t n1 = sim.next_event().state_after.norm1();
      const std::uint64_t h1 = horizon_steps(n1);
      const std::uint64_t lo = std::min(h0, h1);
      const std::uint64_t hi = std::max(h0, h1);
      double tail_sum = 0.0;
      if (1 > lo && 1 <= hi) tail_sum += pw(n1);
      for (std::uint64_t t = 2; t <= hi; ++t) {
        const std::int64_t cur = sim.next_event().state_after.norm1();
        if (t > lo) tail_sum += pw(cur);
      }
      if (lo == hi)
        acc = 0.0;
      else
        acc = h1 > h0 ? tail_sum : -tail_sum;
    }
    samples[pi][static_cast<std::size_t>(est)][rep] = acc;
  });

  auto table = make_table({"norm", "v_hat", "v_se", "pv_hat", "pv_se", "residual",
                           "residual_se", "boundary_hat", "boundary_se", "z"});
  std::vector<double> xs, ys;
  for (std::size_t pi = 0; pi < points; ++pi) {
    const std::int64_t norm = flush_closure(cfg.state_list[pi]).norm1();
    RunningStat v_stat, pv_stat, b_stat;
    for (std::uint64_t rep = 0; rep < cfg.inner_reps; ++rep) {
      v_stat.add(samples[pi][kValue][rep]);
      pv_stat.add(samples[pi][kStep][rep]);
      b_stat.add(samples[pi][kBoundary][rep]);
    }
    const double v = v_stat.mean(), v_se = v_stat.stderr_mean();
    const double pv = pv_stat.mean(), pv_se = pv_stat.stderr_mean();
    const double b = b_stat.mean(), b_se = b_stat.stderr_mean();
    const double residual = pv - v + pw(norm);
    const double residual_se = std::sqrt(v_se * v_se + pv_se * pv_se);
    const double z_den = std::sqrt(residual_se * residual_se + b_se * b_se);
    const double z = z_den > 0.0 ? (residual - b) / z_den : 0.0;
    const std::string key = std::to_string(norm);
    r.add("v_" + key, v, v_se);
    r.add("pv_" + key, pv, pv_se);
    r.add("boundary_" + key, b, b_se);
    r.add_derived("residual_" + key, residual);
    r.add_derived("z_" + key, z);
    table["rows"].push_back({norm, v, v_se, pv, pv_se, residual, residual_se, b, b_se, z});
    if (norm > 0 && v > 0.0) {
      xs.push_back(std::log(static_cast<double>(norm)));
      ys.push_back(std::log(v));
    }
  }
  r.tables["drift"] = std::move(table);
  if (xs.size() >= 2) {
    const LinearFit fit = linear_fit(xs, ys);
    r.add_derived("growth_exponent", fit.slope);
    r.add_derived("growth_r2", fit.r2);
  }

  r.runtime_seconds = timer.seconds();
  return r;
}

ExperimentResult fluid_experiment(const FluidConfig& cfg) {
  const PolicyParams params = derive_params(cfg.delta);
  const NetworkSpec spec = build_ksrs(params);
  if (cfg.kappa_list.empty()) throw std::domain_error("fluid: empty kappa list");
  if (cfg.reps < 1) throw std::domain_error("fluid: reps must be >= 1");
  Timer timer;
  ExperimentResult r;
  r.name = "fluid";
  r.seed = cfg.seed;
  r.replications = cfg.reps;
  stamp(r, params, spec);

  const double drain = params.mu - 1.0;
  const double t_end = cfg.t_end > 0.0 ? cfg.t_end : 0.9 / drain;
  const auto fluid_q4 = [&](double s) { return std::max(0.0, 1.0 - drain * s); };

  const std::size_t nk = cfg.kappa_list.size();
  std::vector<std::vector<double>> sup_dev(nk, std::vector<double>(cfg.reps, 0.0));
  // scaled-state grid from replication 0 of each kappa
  std::vector<std::vector<std::array<double, 4>>> grid_states(
      nk, std::vector<std::array<double, 4>>(cfg.grid_points));
  std::vector<double> grid_times(cfg.grid_points);
  for (std::size_t g = 0; g < cfg.grid_points; ++g)
    grid_times[g] = t_end * static_cast<double>(g) /
                    static_cast<double>(cfg.grid_points > 1 ? cfg.grid_points - 1 : 1);

  parallel_for(nk * cfg.reps, cfg.threads, [&](std::uint64_t idx) {
    const std::size_t ki = static_cast<std::size_t>(idx / cfg.reps);
    const std::uint64_t rep = idx % cfg.reps;
    const double kappa = cfg.kappa_list[ki];
    const std::int64_t q4_0 = static_cast<std::int64_t>(std::floor(kappa));
    Simulator sim(spec, params, QState{{0, 0, 0, q4_0}}, cfg.seed,
                  stream_id(streams::kFluid, static_cast<std::uint32_t>(ki)), rep);
    const double horizon = kappa * t_end;

    const bool record_grid = rep == 0;
    std::size_t next_grid = 0;

    double sup = std::abs(static_cast<double>(q4_0) / kappa - fluid_q4(0.0));
    QState state = sim.state();
    while (true) {
      const double t_before = sim.time();
      if (t_before >= horizon) break;
      const EventRecord rec = sim.next_event();
      const double t_right = std::min(rec.t, horizon);
      // the held state meets the moving fluid line; deviation is piecewise
      // linear so interval endpoints dominate
      sup = std::max(sup, std::abs(static_cast<double>(state.q[3]) / kappa -
                                   fluid_q4(t_right / kappa)));
      if (record_grid)
        while (next_grid < cfg.grid_points && kappa * grid_times[next_grid] < rec.t) {
          for (int i = 0; i < 4; ++i)
            grid_states[ki][next_grid][static_cast<std::size_t>(i)] =
                static_cast<double>(state.q[static_cast<std::size_t>(i)]) / kappa;
          ++next_grid;
        }
      if (rec.t > horizon) break;
      sup = std::max(sup, std::abs(static_cast<double>(rec.state_after.q[3]) / kappa -
                                   fluid_q4(rec.t / kappa)));
      state = rec.state_after;
    }
    if (record_grid)
      while (next_grid < cfg.grid_points) {
        for (int i = 0; i < 4; ++i)
          grid_states[ki][next_grid][static_cast<std::size_t>(i)] =
              static_cast<double>(state.q[static_cast<std::size_t>(i)]) / kappa;
        ++next_grid;
      }
    sup_dev[ki][rep] = sup;
  });

  auto table = make_table({"kappa", "rep", "sup_dev"});
  auto scaled = make_table({"kappa", "t", "q1", "q2", "q3", "q4"});
  for (std::size_t ki = 0; ki < nk; ++ki) {
    RunningStat stat;
    for (std::uint64_t rep = 0; rep < cfg.reps; ++rep) {
      stat.add(sup_dev[ki][rep]);
      table["rows"].push_back({cfg.kappa_list[ki], rep, sup_dev[ki][rep]});
    }
    const std::string key = num_key(cfg.kappa_list[ki]);
    r.add("mean_sup_dev_" + key, stat.mean(), stat.stderr_mean());
    r.add_derived("median_sup_dev_" + key, median(sup_dev[ki]));
    for (std::size_t g = 0; g < cfg.grid_points; ++g)
      scaled["rows"].push_back({cfg.kappa_list[ki], grid_times[g], grid_states[ki][g][0],
                                grid_states[ki][g][1], grid_states[ki][g][2],
                                grid_states[ki][g][3]});
  }
  r.tables["fluid"] = std::move(table);
  r.tables["scaled"] = std::move(scaled);
  r.add_derived("t_end", t_end);

  r.runtime_seconds = timer.seconds();
  return r;
}

}  // namespace ksrs
