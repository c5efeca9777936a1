#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ksrs/engine.hpp"
#include "ksrs/netmodel.hpp"
#include "ksrs/policy.hpp"
#include "ksrs/rng.hpp"

namespace ksrs {

// Common container for every experiment: point estimates with standard
// errors, replication counts, seed, parameter echo, and per-point tables the
// CLI turns into CSV artifacts.
struct ExperimentResult {
  std::string name;
  std::string regime = "n/a";
  nlohmann::json params;
  nlohmann::json network;
  std::uint64_t seed = 0;
  std::uint64_t replications = 0;
  std::map<std::string, double> estimates;
  std::map<std::string, double> stderrs;
  std::map<std::string, double> derived;  // exact/deterministic quantities
  std::vector<std::string> warnings;
  double runtime_seconds = 0.0;
  std::vector<std::string> artifacts;
  // name -> {columns: [...], rows: [[...], ...]}
  std::map<std::string, nlohmann::json> tables;

  void add(const std::string& key, double value, double stderr_value);
  void add_derived(const std::string& key, double value);
  nlohmann::json to_json() const;
};

// Scaled view of a trajectory: state and busy time at grid instants of the
// accelerated clock, both divided by kappa.
struct ScaledTrajectory {
  double kappa = 1.0;
  std::array<double, 4> x{};  // scaled initial condition, floor(kappa*x)/kappa
  std::vector<double> grid;   // scaled times
  std::vector<std::array<double, 4>> q_scaled;
  std::vector<std::array<double, 2>> z_scaled;
};

// Requires a full event log covering kappa * max(grid); throws
// std::out_of_range past the recorded horizon.
ScaledTrajectory fluid_scale(const Trajectory& traj, double kappa,
                             const std::vector<double>& grid);

// Acceptance windows of the drain-and-refill construction for a start with
// everything in buffer 4. Throws std::domain_error unless 0 < epsilon < 1/10.
struct CascadeWindows {
  double epsilon = 0.0;
  std::int64_t x4 = 0;
  double t4_lo = 0.0, t4_hi = 0.0;      // first buffer-4 emptying time
  double q2_lo = 0.0, q2_hi = 0.0;      // buffer-2 content at that instant
  double t24_lo = 0.0, t24_hi = 0.0;    // buffer-2 drain duration after it
  double q4_lo = 0.0, q4_hi = 0.0;      // buffer-4 content at the second instant
  double cycle_t_lo = 0.0, cycle_t_hi = 0.0;          // whole-cycle time window
  double cycle_ratio_lo = 0.0, cycle_ratio_hi = 0.0;  // Q4(T)/T window
};
CascadeWindows cascade_windows(const PolicyParams& params, std::int64_t x4, double epsilon);

// One M/M/1 emptying time (unit arrivals, service mu) from n jobs; shared
// analytic oracle, no policy code involved.
double mm1_emptying_time(std::int64_t n, double mu, RngStream& rng);

struct Mm1Config {
  std::int64_t n = 50;
  double mu = 1.1;
  double epsilon = 0.1;
  std::uint64_t reps = 10'000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};
ExperimentResult mm1_emptying_oracle(const Mm1Config& cfg);

struct PoissonLdConfig {
  double nu = 1.0;
  std::vector<double> t_list{25, 50, 100, 200};
  double epsilon = 0.1;
  std::uint64_t reps = 100'000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};
ExperimentResult poisson_ld_check(const PoissonLdConfig& cfg);

struct DrainConfig {
  double delta = 0.02;
  std::int64_t n = 10'000;
  double epsilon = 0.3;
  std::uint64_t reps = 100;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::uint64_t event_cap = kDefaultEventCap;
};
ExperimentResult drain_experiment(const DrainConfig& cfg);

struct HoldsConfig {
  double delta = 0.2;
  std::vector<std::int64_t> x4_list{10, 20, 40, 80};
  std::uint64_t reps = 100'000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::uint64_t event_cap = kDefaultEventCap;
};
ExperimentResult hold_event_experiment(const HoldsConfig& cfg);

enum class CascadeStage { kE4E1, kFull };

struct CascadeConfig {
  double delta = 0.2;
  std::int64_t x4 = 40;
  double epsilon = 0.09;
  std::uint64_t reps = 1'000'000;
  std::uint64_t seed = 1;
  CascadeStage stage = CascadeStage::kE4E1;
  // window checks off, emptiness checks on (small-x4 relaxation)
  bool state_only = false;
  unsigned threads = 1;
  std::uint64_t event_cap = kDefaultEventCap;
};
ExperimentResult cascade_experiment(const CascadeConfig& cfg);

// Product lower bound for n successive cycles, log-space, plus the closed
// form and the telescoped comparison value.
struct CascadeBound {
  double ln_value = 0.0;             // per-factor log-space sum
  double ln_value_closed_form = 0.0; // n ln(alpha) - sum_m ((ln b1)^2 + 2 eta (m+1) ln b1 ln b2)/2
  double value = 0.0;                // exp(ln_value), may underflow to 0
  double ln_telescoped_majorant = 0.0;  // ln of the half-power comparison point
};
CascadeBound cascade_bound(std::int64_t n, double alpha, const PolicyParams& params);

struct TailConfig {
  double delta = 0.2;
  std::uint64_t total_events = 10'000'000;
  std::uint64_t burn_in = 0;
  std::uint64_t seed = 1;
  QState atom{{0, 0, 0, 1}};
  std::uint64_t cycle_csv_cap = 100'000;
  std::uint64_t event_cap = kDefaultEventCap;  // per cycle
};
ExperimentResult tail_occupation(const TailConfig& cfg);

struct DriftConfig {
  double delta = 0.1;
  int p = 1;
  double t_mult = 40.0;  // embedded steps per unit of the starting norm
  std::vector<QState> state_list;
  std::uint64_t inner_reps = 1'000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};
ExperimentResult drift_estimate(const DriftConfig& cfg);

struct FluidConfig {
  double delta = 0.1;
  std::vector<double> kappa_list{100, 1'000, 10'000};
  std::uint64_t reps = 50;
  double t_end = -1.0;  // scaled horizon; default 0.9/(mu-1)
  std::size_t grid_points = 91;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};
ExperimentResult fluid_experiment(const FluidConfig& cfg);

}  // namespace ksrs
