#include <doctest.h>

#include <cmath>

#include "ksrs/experiments.hpp"
#include "ksrs/stats.hpp"

using namespace ksrs;

TEST_CASE("mm1 oracle: busy-period mean and window behavior") {
  SUBCASE("single job at mu=2 drains in mean time one") {
    Mm1Config cfg;
    cfg.n = 1;
    cfg.mu = 2.0;
    cfg.reps = 20000;
    cfg.seed = 5;
    cfg.threads = 2;
    const ExperimentResult r = mm1_emptying_oracle(cfg);
    CHECK(r.estimates.at("mean_T") == doctest::Approx(1.0).epsilon(0.03));
    CHECK(r.derived.at("expected_mean") == doctest::Approx(1.0));
    CHECK(r.stderrs.at("mean_T") > 0.0);
  }
  SUBCASE("window frequency grows with n at fixed epsilon") {
    Mm1Config small, large;
    small.n = 10;
    large.n = 1000;
    small.mu = large.mu = 1.2;
    small.epsilon = large.epsilon = 0.25;
    small.reps = large.reps = 2000;
    small.seed = large.seed = 6;
    small.threads = large.threads = 2;
    const double f_small = mm1_emptying_oracle(small).estimates.at("window_freq");
    const double f_large = mm1_emptying_oracle(large).estimates.at("window_freq");
    CHECK(f_large > f_small);
    CHECK(f_large > 0.9);
  }
  SUBCASE("preconditions") {
    Mm1Config bad;
    bad.mu = 0.9;
    CHECK_THROWS_AS(mm1_emptying_oracle(bad), std::domain_error);
  }
}

TEST_CASE("poisson deviation check: domain guard and decay trend") {
  PoissonLdConfig cfg;
  cfg.nu = 1.0;
  cfg.t_list = {10, 20, 40};
  cfg.epsilon = 0.3;
  cfg.reps = 20000;
  cfg.seed = 7;
  cfg.threads = 2;
  const ExperimentResult r = poisson_ld_check(cfg);
  CHECK(r.derived.at("fitted_rate") > 0.0);
  const double p10 = r.estimates.at("p_hat_t10");
  const double p40 = r.estimates.at("p_hat_t40");
  CHECK(p40 < p10);

  PoissonLdConfig bad = cfg;
  bad.epsilon = 0.0;
  CHECK_THROWS_AS(poisson_ld_check(bad), std::domain_error);

  SUBCASE("large deviation at t=100, eps=0.5 sits below 1e-4") {
    PoissonLdConfig big;
    big.nu = 1.0;
    big.t_list = {100};
    big.epsilon = 0.5;
    big.reps = 1'000'000;
    big.seed = 77;
    big.threads = 2;
    const ExperimentResult r = poisson_ld_check(big);
    CHECK(r.estimates.at("p_hat_t100") < 1e-4);
  }
  SUBCASE("zero observed deviations yield the one-sided bound") {
    PoissonLdConfig none;
    none.nu = 1.0;
    none.t_list = {50};
    none.epsilon = 3.0;  // deviations beyond 3x the mean never show up
    none.reps = 5000;
    none.seed = 78;
    none.threads = 2;
    const ExperimentResult r = poisson_ld_check(none);
    CHECK(r.estimates.at("p_hat_t50") == 0.0);
    REQUIRE(!r.warnings.empty());
    CHECK(r.warnings.front().find("one-sided") != std::string::npos);
    const auto& row = r.tables.at("ld")["rows"][0];
    CHECK(row[3].get<double>() > 0.0);  // ci_hi
    CHECK(row[3].get<double>() < 0.01);
  }
}

TEST_CASE("drain experiment accepts overwhelmingly in the second-moment regime") {
  DrainConfig cfg;
  cfg.delta = 0.02;
  cfg.n = 2000;
  cfg.epsilon = 0.5;
  cfg.reps = 40;
  cfg.seed = 8;
  cfg.threads = 2;
  const ExperimentResult r = drain_experiment(cfg);
  CHECK(r.estimates.at("p_accept") >= 0.85);
  CHECK(r.regime == "second-moment");
  CHECK(r.derived.at("tau_n") == doctest::Approx(100000.0));
  // mean drain time of buffer 4 tracks the fluid value n/(mu-1); the
  // per-replication spread is wide at this load, hence the loose window
  CHECK(r.estimates.at("mean_T4") == doctest::Approx(100000.0).epsilon(0.15));

  SUBCASE("acceptance is exactly monotone in epsilon at a fixed seed") {
    DrainConfig wide = cfg;
    wide.epsilon = 0.8;
    const double p_narrow = r.estimates.at("p_accept");
    const double p_wide = drain_experiment(wide).estimates.at("p_accept");
    CHECK(p_wide >= p_narrow);  // nested acceptance sets, identical runs
  }
  SUBCASE("acceptance improves with scale") {
    // relative deviation shrinks like 1/sqrt(n); the gap here is ~9 sigma,
    // far outside replication noise
    DrainConfig small = cfg;
    small.n = 200;
    const double p_small = drain_experiment(small).estimates.at("p_accept");
    CHECK(r.estimates.at("p_accept") >= p_small);
  }
}

TEST_CASE("hold-survival: policy path agrees with the thinning oracle") {
  HoldsConfig cfg;
  cfg.delta = 0.2;
  cfg.x4_list = {5, 15};
  cfg.reps = 20000;
  cfg.seed = 9;
  cfg.threads = 2;
  const ExperimentResult r = hold_event_experiment(cfg);
  for (std::int64_t x4 : cfg.x4_list) {
    const std::string key = std::to_string(x4);
    const double pp = r.estimates.at("p_policy_" + key);
    const double po = r.estimates.at("p_oracle_" + key);
    const double se = std::sqrt(std::pow(r.stderrs.at("p_policy_" + key), 2) +
                                std::pow(r.stderrs.at("p_oracle_" + key), 2));
    CHECK(pp > 0.0);
    CHECK(std::abs(pp - po) <= 3.0 * se);
  }
  CHECK(r.tables.count("holds") == 1);
}

TEST_CASE("cascade windows: arithmetic, preconditions, small-scale run") {
  const PolicyParams p = derive_params(0.2);
  const CascadeWindows w = cascade_windows(p, 40, 0.09);
  // for epsilon < 1/10 the held-count window sits below 2*gamma4*x4
  CHECK(w.q2_hi < 2.0 * p.gamma4 * 40.0);
  CHECK(w.t4_lo == doctest::Approx(0.91 * 40.0 / 0.2));
  CHECK(w.t4_hi == doctest::Approx(1.09 * 40.0 / 0.2));
  CHECK_THROWS_AS(cascade_windows(p, 40, 0.1), std::domain_error);
  CHECK_THROWS_AS(cascade_windows(p, 40, 0.0), std::domain_error);
  CHECK_THROWS_AS(cascade_windows(p, 0, 0.05), std::domain_error);

  CascadeConfig cfg;
  cfg.delta = 0.2;
  cfg.x4 = 10;
  cfg.epsilon = 0.09;
  cfg.reps = 30000;
  cfg.seed = 10;
  cfg.stage = CascadeStage::kFull;
  cfg.state_only = true;
  cfg.threads = 2;
  const ExperimentResult r = cascade_experiment(cfg);
  // detectors are nested: the joint event cannot beat its parts
  CHECK(r.estimates.at("p_e4e1") <= r.estimates.at("p_e4"));
  CHECK(r.estimates.at("p_e4e1") <= r.estimates.at("p_e1"));
  CHECK(r.estimates.at("p_full") <= r.estimates.at("p_e4e1"));
  // the emptiness-only relaxation dominates the windowed cycle detector
  CHECK(r.estimates.at("p_state_only_cycle") >= r.estimates.at("p_cycle_window"));
  CHECK(r.estimates.at("p_state_only_cycle") > 0.0);
}

TEST_CASE("cascade bound: routes agree, decreasing, telescoped majorant") {
  const PolicyParams p = derive_params(0.1);
  SUBCASE("log-space equals the closed form") {
    for (std::int64_t n : {1, 2, 5, 20}) {
      const CascadeBound b = cascade_bound(n, 1.0, p);
      CHECK(b.ln_value ==
            doctest::Approx(b.ln_value_closed_form).epsilon(1e-12));
    }
  }
  SUBCASE("n=1, alpha=1 matches the expanded formula and the direct route") {
    const CascadeBound b = cascade_bound(1, 1.0, p);
    const double expected =
        -0.5 * (p.ln_beta1 * p.ln_beta1 +
                4.0 * p.eta * p.ln_beta1 * p.ln_beta2);
    CHECK(b.ln_value == doctest::Approx(expected).epsilon(1e-12));
    // frozen 40-digit oracle value
    CHECK(b.ln_value == doctest::Approx(-25.902903939802349).epsilon(1e-12));
    // direct evaluation through the weighting-function ratio at s = beta2^2
    const double s = p.beta2 * p.beta2;
    const double direct = -2.0 * 0.25 *
                          (ln_big_psi(p.beta1 * std::pow(s, p.eta)) -
                           ln_big_psi(std::pow(s, p.eta)));
    CHECK(b.ln_value == doctest::Approx(direct).epsilon(1e-10));
  }
  SUBCASE("strictly decreasing in n") {
    double prev = 0.0;
    for (std::int64_t n = 1; n <= 12; ++n) {
      const CascadeBound b = cascade_bound(n, 1.0, p);
      CHECK(b.ln_value < prev);
      prev = b.ln_value;
    }
  }
  SUBCASE("product of squared factors stays below the half-power majorant") {
    for (std::int64_t n = 1; n <= 20; ++n) {
      const CascadeBound b = cascade_bound(n, 1.0, p);
      CHECK(-b.ln_value < b.ln_telescoped_majorant);
    }
  }
  CHECK_THROWS_AS(cascade_bound(0, 1.0, p), std::domain_error);
  CHECK_THROWS_AS(cascade_bound(1, 1.5, p), std::domain_error);
}

TEST_CASE("tail occupation: identities, ccdf shape, half-run consistency") {
  // second-moment regime: hold batches have finite variance, so returns to
  // the atom actually accumulate at desk scale
  TailConfig cfg;
  cfg.delta = 0.02;
  cfg.total_events = 1'500'000;
  cfg.seed = 11;
  const ExperimentResult r = tail_occupation(cfg);

  // occupation weights sum to one
  double wsum = 0.0;
  for (const auto& row : r.tables.at("occupation")["rows"])
    wsum += row[2].get<double>();
  CHECK(wsum == doctest::Approx(1.0).epsilon(1e-9));

  // empirical ccdf is non-increasing
  double prev = 1.1;
  for (const auto& row : r.tables.at("ccdf")["rows"]) {
    const double p_hat = row[1].get<double>();
    CHECK(p_hat <= prev + 1e-15);
    prev = p_hat;
  }

  // moments are finite and the two disjoint halves agree, order by order
  const double m1 = r.estimates.at("moment_p1");
  CHECK(m1 > 0.0);
  CHECK(std::isfinite(m1));
  for (int p = 1; p <= 4; ++p) {
    const std::string k = "moment_p" + std::to_string(p);
    const double h1 = r.estimates.at(k + "_half1");
    const double h2 = r.estimates.at(k + "_half2");
    const double se = std::sqrt(std::pow(r.stderrs.at(k + "_half1"), 2) +
                                std::pow(r.stderrs.at(k + "_half2"), 2));
    CHECK(std::abs(h1 - h2) <= 3.0 * se);
  }
  CHECK(r.derived.at("cycles") >= 100.0);
  CHECK(std::abs(r.derived.at("cycle_duration_autocorr1")) < 0.05);
  CHECK(r.derived.at("skip_free_violations") == 0.0);
  CHECK(r.derived.at("stability_violations") == 0.0);

  SUBCASE("too few cycles raises the warning") {
    TailConfig tiny = cfg;
    tiny.total_events = 200;
    const ExperimentResult t = tail_occupation(tiny);
    bool warned = false;
    for (const auto& w : t.warnings)
      if (w.find("insufficient-cycles") != std::string::npos) warned = true;
    CHECK(warned);
  }
}

TEST_CASE("drift estimate: zero state, residual identity, growth") {
  DriftConfig cfg;
  cfg.delta = 0.1;
  cfg.p = 1;
  cfg.t_mult = 10.0;
  cfg.state_list = {QState{{0, 0, 0, 0}}, QState{{0, 0, 0, 4}}, QState{{0, 0, 0, 8}},
                    QState{{0, 0, 0, 16}}};
  cfg.inner_reps = 400;
  cfg.seed = 12;
  cfg.threads = 2;
  const ExperimentResult r = drift_estimate(cfg);

  // horizon-zero start: empty sum
  CHECK(r.estimates.at("v_0") == 0.0);

  // exact rearrangement: residual equals the independently estimated
  // boundary term within combined noise
  for (const std::string key : {"4", "8", "16"}) {
    CHECK(std::abs(r.derived.at("z_" + key)) < 3.5);
    CHECK(r.estimates.at("v_" + key) > 0.0);
  }
  // superlinear growth of the potential
  CHECK(r.derived.at("growth_exponent") > 1.3);

  DriftConfig bad = cfg;
  bad.p = 3;
  CHECK_THROWS_AS(drift_estimate(bad), std::domain_error);

  SUBCASE("small inner_reps attaches the variance warning") {
    DriftConfig tiny = cfg;
    tiny.state_list = {QState{{0, 0, 0, 4}}};
    tiny.inner_reps = 50;
    const ExperimentResult t = drift_estimate(tiny);
    REQUIRE(!t.warnings.empty());
    CHECK(t.warnings.front().find("variance warning") != std::string::npos);
  }
}

TEST_CASE("fluid scale: identity at kappa=1, floor error, range guard") {
  const PolicyParams p = derive_params(0.1);
  const NetworkSpec spec = build_ksrs(p);
  Simulator sim(spec, p, QState{{0, 0, 0, 7}}, 13, 904, 0);
  const Trajectory traj = sim.run_until_time(30.0);

  SUBCASE("kappa=1 reproduces the recorded states") {
    const std::vector<double> grid{0.0, 5.0, 10.0, 20.0, 29.0};
    const ScaledTrajectory s = fluid_scale(traj, 1.0, grid);
    REQUIRE(s.q_scaled.size() == grid.size());
    CHECK(s.q_scaled[0][3] == doctest::Approx(7.0));
    // state at t=5 equals the last recorded event state before it
    QState ref = traj.initial;
    for (const auto& ev : traj.events)
      if (ev.t <= 5.0) ref = ev.state_after;
    for (int i = 0; i < 4; ++i)
      CHECK(s.q_scaled[1][static_cast<std::size_t>(i)] ==
            doctest::Approx(static_cast<double>(ref.q[static_cast<std::size_t>(i)])));
  }
  SUBCASE("grid beyond the horizon is a range error") {
    CHECK_THROWS_AS(fluid_scale(traj, 1.0, {40.0}), std::out_of_range);
  }
  SUBCASE("scaled initial condition is within the floor error of x") {
    const double kappa = 31.0;
    Simulator big(spec, p, QState{{0, 0, 0, static_cast<std::int64_t>(kappa)}}, 13, 905, 0);
    const Trajectory t2 = big.run_until_time(1.0);
    const ScaledTrajectory s = fluid_scale(t2, kappa, {0.0});
    double norm0 = 0.0;
    for (double v : s.q_scaled[0]) norm0 += v;
    CHECK(std::abs(norm0 - 1.0) <= 4.0 / kappa);
  }
  SUBCASE("scaled busy times start at zero and respect the scaled clock") {
    const std::vector<double> grid{0.0, 10.0, 25.0};
    const ScaledTrajectory s = fluid_scale(traj, 1.0, grid);
    CHECK(s.z_scaled[0][0] == 0.0);
    CHECK(s.z_scaled[0][1] == 0.0);
    for (std::size_t g = 1; g < grid.size(); ++g) {
      CHECK(s.z_scaled[g][0] >= s.z_scaled[g - 1][0]);
      CHECK(s.z_scaled[g][1] >= s.z_scaled[g - 1][1]);
      CHECK(s.z_scaled[g][0] <= grid[g]);
      CHECK(s.z_scaled[g][1] <= grid[g]);
    }
  }
}

TEST_CASE("fluid experiment tracks the drain line and tightens with kappa") {
  FluidConfig cfg;
  cfg.delta = 0.1;
  cfg.kappa_list = {30, 300};
  cfg.reps = 12;
  cfg.seed = 14;
  cfg.threads = 2;
  const ExperimentResult r = fluid_experiment(cfg);
  const double dev_small = r.derived.at("median_sup_dev_30");
  const double dev_large = r.derived.at("median_sup_dev_300");
  CHECK(dev_large < dev_small);
  CHECK(r.tables.at("scaled")["rows"].size() == 2 * 91);
  CHECK(r.derived.at("t_end") == doctest::Approx(9.0));
}
