#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ksrs/netmodel.hpp"
#include "ksrs/policy.hpp"
#include "ksrs/rng.hpp"

namespace ksrs {

enum class EventKind : std::uint8_t { kArr1, kArr3, kSvc2, kSvc4 };

const char* event_kind_name(EventKind k);

// One event epoch: time, what fired, the post-closure state, and how many
// jobs the closure moved out of buffers 1 and 3 at this instant.
struct EventRecord {
  double t = 0.0;
  EventKind kind = EventKind::kArr1;
  QState state_after;
  std::int64_t flushed1 = 0;
  std::int64_t flushed3 = 0;
};

struct Trajectory {
  QState initial;
  std::vector<EventRecord> events;  // every epoch up to log_cap
  bool log_truncated = false;
  // (time, state) samples on an even grid over [0, horizon]; filled when
  // grid_points > 0 so thinned runs keep full time coverage.
  std::vector<std::pair<double, QState>> grid;
  double horizon = 0.0;
  double final_t = 0.0;
  QState final_state;
  std::uint64_t total_events = 0;
  std::array<double, 2> busy{0.0, 0.0};
};

struct HitResult {
  double t = 0.0;
  QState state;
  std::uint64_t events = 0;
};

// Per-regeneration-cycle summary; occupation is the sparse time-in-norm
// integral (norm value, time) within the cycle.
struct CycleStats {
  double duration = 0.0;
  std::uint64_t events = 0;
  std::int64_t sup_norm = 0;
  std::vector<std::pair<std::int64_t, double>> occupation;
};

// Event-cap guard for hitting-time runs at near-critical load.
class CapExceeded : public std::runtime_error {
 public:
  CapExceeded(std::uint64_t events, double t, QState state)
      : std::runtime_error("event cap exceeded after " + std::to_string(events) +
                           " events at t=" + std::to_string(t)),
        events_consumed(events),
        time(t),
        last_state(state) {}

  std::uint64_t events_consumed;
  double time;
  QState last_state;
};

inline constexpr std::uint64_t kDefaultEventCap = 1'000'000'000ULL;
inline constexpr std::uint64_t kDefaultLogCap = 1'000'000ULL;

// Exact continuous-time simulator of the four-buffer instance under the
// randomized hold policy. Competing exponential clocks with a full redraw
// after every event, in the fixed order Arr1, Arr3, Svc2, Svc4 (inactive
// clocks draw nothing); the rule-(iv) uniform is drawn only when that branch
// is reached. The whole trajectory is a pure function of
// (seed, stream_id, replication).
class Simulator {
 public:
  Simulator(const NetworkSpec& spec, const PolicyParams& params, QState x0,
            std::uint64_t seed, std::uint64_t stream, std::uint64_t replication = 0);

  EventRecord next_event();

  // Deterministic transition for tests: applies the given event kind after
  // dt time units, feeding the rule-(iv) branch the supplied uniform.
  // Throws std::invalid_argument for a service completion on an empty buffer.
  EventRecord step_with(EventKind kind, double u = 0.0, double dt = 0.0);

  Trajectory run_until_time(double horizon, std::uint64_t log_cap = kDefaultLogCap,
                            std::size_t grid_points = 0);

  // First epoch (including t=0) whose post-closure state satisfies pred.
  HitResult run_until_hit(const std::function<bool(const QState&)>& pred,
                          std::uint64_t max_events = kDefaultEventCap);

  // Splits the run at successive visits to atom into n_cycles cycles; the
  // stretch before the first visit (when the run does not start there) is
  // warm-up, not a cycle.
  std::vector<CycleStats> regen_cycles(const QState& atom, std::uint64_t n_cycles,
                                       std::uint64_t max_events_per_cycle = kDefaultEventCap);

  const QState& state() const { return q_; }
  double time() const { return t_; }
  const std::array<double, 2>& busy() const { return busy_; }
  std::uint64_t events() const { return events_; }

  // Invariant-violation counters; all stay zero on runs from stable states.
  std::uint64_t skip_free_violations() const { return skip_free_violations_; }
  std::uint64_t stability_violations() const { return stability_violations_; }
  std::uint64_t both_flush_enabled() const { return both_flush_enabled_; }

  double psi(std::int64_t n) const { return psi_(n); }
  const PolicyParams& params() const { return params_; }

 private:
  EventRecord apply_event(EventKind kind, double dt, bool have_u, double u);

  PolicyParams params_;
  PsiTable psi_;
  double lambda1_, lambda3_, mu2_, mu4_;
  QState q_;
  double t_ = 0.0;
  std::array<double, 2> busy_{0.0, 0.0};
  std::uint64_t events_ = 0;
  RngStream rng_;
  std::uint64_t skip_free_violations_ = 0;
  std::uint64_t stability_violations_ = 0;
  std::uint64_t both_flush_enabled_ = 0;
};

}  // namespace ksrs
