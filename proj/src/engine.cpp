#include "ksrs/engine.hpp"

#include <cmath>

namespace ksrs {

const char* event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::kArr1: return "Arr1";
    case EventKind::kArr3: return "Arr3";
    case EventKind::kSvc2: return "Svc2";
    case EventKind::kSvc4: return "Svc4";
  }
  return "?";
}

Simulator::Simulator(const NetworkSpec& spec, const PolicyParams& params, QState x0,
                     std::uint64_t seed, std::uint64_t stream, std::uint64_t replication)
    : params_(params), psi_(params, 64), rng_(seed, stream, replication) {
  if (!is_ksrs(spec))
    throw std::invalid_argument("Simulator: unsupported topology (not the KSRS instance)");
  for (auto v : x0.q)
    if (v < 0) throw std::invalid_argument("Simulator: negative initial buffer content");
  lambda1_ = spec.arrival_rates[0];
  lambda3_ = spec.arrival_rates[2];
  mu2_ = spec.service_rates[1].rate;
  mu4_ = spec.service_rates[3].rate;
  // Initial condition is stabilized: arbitrary x0 may enable both closure
  // rules, which is fine here and not counted as an anomaly.
  q_ = flush_closure(x0);
}

EventRecord Simulator::next_event() {
  // Fixed draw order keeps the stream layout a pure function of the state
  // sequence: Arr1, Arr3, then each active service clock.
  double dt = rng_.exponential(lambda1_);
  EventKind kind = EventKind::kArr1;
  const double d3 = rng_.exponential(lambda3_);
  if (d3 < dt) {
    dt = d3;
    kind = EventKind::kArr3;
  }
  if (q_.q[1] > 0) {
    const double d2 = rng_.exponential(mu2_);
    if (d2 < dt) {
      dt = d2;
      kind = EventKind::kSvc2;
    }
  }
  if (q_.q[3] > 0) {
    const double d4 = rng_.exponential(mu4_);
    if (d4 < dt) {
      dt = d4;
      kind = EventKind::kSvc4;
    }
  }
  return apply_event(kind, dt, /*have_u=*/false, 0.0);
}

EventRecord Simulator::step_with(EventKind kind, double u, double dt) {
  if (kind == EventKind::kSvc2 && q_.q[1] <= 0)
    throw std::invalid_argument("step_with: Svc2 with empty buffer 2");
  if (kind == EventKind::kSvc4 && q_.q[3] <= 0)
    throw std::invalid_argument("step_with: Svc4 with empty buffer 4");
  return apply_event(kind, dt, /*have_u=*/true, u);
}

EventRecord Simulator::apply_event(EventKind kind, double dt, bool have_u, double u) {
  const std::int64_t norm_before = q_.norm1();

  if (q_.q[1] > 0) busy_[0] += dt;
  if (q_.q[3] > 0) busy_[1] += dt;
  t_ += dt;

  // Flushed counts cover every job moved at this epoch, whether by a failed
  // hold or by the closure rules.
  std::int64_t flushed1 = 0;
  std::int64_t flushed3 = 0;

  switch (kind) {
    case EventKind::kArr1:
      q_.q[0] += 1;
      if (rule_iv_applies(q_, 1)) {
        const double draw = have_u ? u : rng_.uniform();
        if (draw >= psi_(q_.q[0])) {
          // failed hold: the whole buffer moves downstream now
          flushed1 = q_.q[0];
          q_.q[1] += q_.q[0];
          q_.q[0] = 0;
        }
      }
      break;
    case EventKind::kArr3:
      q_.q[2] += 1;
      if (rule_iv_applies(q_, 3)) {
        const double draw = have_u ? u : rng_.uniform();
        if (draw >= psi_(q_.q[2])) {
          flushed3 = q_.q[2];
          q_.q[3] += q_.q[2];
          q_.q[2] = 0;
        }
      }
      break;
    case EventKind::kSvc2:
      q_.q[1] -= 1;  // exit buffer: the job leaves
      break;
    case EventKind::kSvc4:
      q_.q[3] -= 1;
      break;
  }

  const FlushResult fl = flush_closure_in_place(q_);
  EventRecord rec;
  rec.t = t_;
  rec.kind = kind;
  rec.state_after = q_;
  rec.flushed1 = flushed1 + fl.flushed1;
  rec.flushed3 = flushed3 + fl.flushed3;

  ++events_;
  if (fl.both_enabled) ++both_flush_enabled_;

  const std::int64_t expected =
      (kind == EventKind::kArr1 || kind == EventKind::kArr3) ? 1 : -1;
  if (q_.norm1() - norm_before != expected) ++skip_free_violations_;
  if (!q_.stable()) ++stability_violations_;

  return rec;
}

Trajectory Simulator::run_until_time(double horizon, std::uint64_t log_cap,
                                     std::size_t grid_points) {
  if (horizon < t_) throw std::invalid_argument("run_until_time: horizon before current clock");
  Trajectory traj;
  traj.initial = q_;
  traj.horizon = horizon;

  std::vector<double> grid_times;
  std::size_t next_grid = 0;
  if (grid_points > 1) {
    grid_times.reserve(grid_points);
    for (std::size_t k = 0; k < grid_points; ++k)
      grid_times.push_back(horizon * static_cast<double>(k) /
                           static_cast<double>(grid_points - 1));
  }

  while (t_ < horizon) {
    const QState before = q_;
    const EventRecord rec = next_event();
    while (next_grid < grid_times.size() && grid_times[next_grid] < rec.t) {
      traj.grid.emplace_back(grid_times[next_grid], before);
      ++next_grid;
    }
    ++traj.total_events;
    if (traj.events.size() < log_cap)
      traj.events.push_back(rec);
    else
      traj.log_truncated = true;
  }
  while (next_grid < grid_times.size() && grid_times[next_grid] <= t_) {
    traj.grid.emplace_back(grid_times[next_grid], q_);
    ++next_grid;
  }
  traj.final_t = t_;
  traj.final_state = q_;
  traj.busy = busy_;
  return traj;
}

HitResult Simulator::run_until_hit(const std::function<bool(const QState&)>& pred,
                                   std::uint64_t max_events) {
  if (pred(q_)) return {t_, q_, 0};
  for (std::uint64_t n = 1; n <= max_events; ++n) {
    const EventRecord rec = next_event();
    if (pred(rec.state_after)) return {rec.t, rec.state_after, n};
  }
  throw CapExceeded(max_events, t_, q_);
}

std::vector<CycleStats> Simulator::regen_cycles(const QState& atom, std::uint64_t n_cycles,
                                                std::uint64_t max_events_per_cycle) {
  // warm-up to the first atom visit
  run_until_hit([&](const QState& s) { return s == atom; }, max_events_per_cycle);

  std::vector<CycleStats> cycles;
  cycles.reserve(n_cycles);
  for (std::uint64_t c = 0; c < n_cycles; ++c) {
    CycleStats cs;
    const double t_start = t_;
    std::vector<std::pair<std::int64_t, double>>& occ = cs.occupation;
    for (;;) {
      if (cs.events >= max_events_per_cycle) throw CapExceeded(cs.events, t_, q_);
      const std::int64_t norm = q_.norm1();
      const double t_before = t_;
      const EventRecord rec = next_event();
      ++cs.events;
      const double dt = rec.t - t_before;
      bool found = false;
      for (auto& [v, w] : occ)
        if (v == norm) {
          w += dt;
          found = true;
          break;
        }
      if (!found) occ.emplace_back(norm, dt);
      cs.sup_norm = std::max(cs.sup_norm, rec.state_after.norm1());
      if (rec.state_after == atom) break;
    }
    cs.duration = t_ - t_start;
    cycles.push_back(std::move(cs));
  }
  return cycles;
}

}  // namespace ksrs
