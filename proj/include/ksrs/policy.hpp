#pragma once

#include <cstdint>
#include <vector>

#include "ksrs/netmodel.hpp"

namespace ksrs {

// Everything derived from the single knob delta. mu2 = mu4 = 1 + delta, and
// the weighting-function constants follow in closed form:
//   rho = 1/(1+delta), gamma2 = gamma4 = 1/delta, gamma24 = 1/delta^2,
//   beta1 = gamma24/4, beta2 = 4*gamma24, eta = ln(beta1)/ln(beta2).
// Natural logarithms throughout.
struct PolicyParams {
  double delta = 0.0;
  double mu = 0.0;
  double rho = 0.0;
  double gamma2 = 0.0;
  double gamma4 = 0.0;
  double gamma24 = 0.0;
  double gamma = 0.0;   // gamma4 + gamma24
  double beta1 = 0.0;
  double beta2 = 0.0;
  double eta = 0.0;
  double c = 0.0;       // = beta1
  double ln_beta1 = 0.0;
  double ln_beta2 = 0.0;
  // eta * ln(beta1) / 2: the exponent governing the hold-count tail,
  // P(hold run >= k) = k^{-hold_exponent}. Cached; used on the hot path.
  double hold_exponent = 0.0;
  bool eta_condition_holds = false;    // eta > sqrt(12/ln c)
  bool second_moment_holds = false;    // eta * ln(beta1) > 4
};

// Validity regime of a given delta, stamped on every experiment result.
//   certified:     eta condition (full tail-bound machinery applies)
//   second-moment: hold counts have finite second moment (drain/fluid valid)
//   exploratory:   mechanism studies only
enum class Regime { kCertified, kSecondMoment, kExploratory };
Regime regime(const PolicyParams& params);
const char* regime_name(Regime r);

// Throws std::domain_error outside 0 < delta < 1/2, naming the violated
// bound (beta1 <= 1, or rho <= 1/2 when delta >= 1).
PolicyParams derive_params(double delta);

bool check_eta_condition(const PolicyParams& params);

nlohmann::json to_json(const PolicyParams& params);

// Weighting function: s^(ln s) = exp((ln s)^2) for s > 0, 0 at s = 0.
double big_psi(double s);
// ln of the above for s > 0.
double ln_big_psi(double s);

// ln Psi*(s) = ((ln b1)^2 + 2 eta ln(b1) ln(s)) / 4 for s >= 1, the log-space
// expansion of the fourth root of big_psi(beta1*s^eta)/big_psi(s^eta).
// Throws std::domain_error for s < 1.
double ln_psi_star(double s, const PolicyParams& params);
double psi_star(double s, const PolicyParams& params);

// Hold probability of the n-th surviving job, Psi*(n)/Psi*(n+1), strictly in
// (0,1) and increasing to 1 when beta1 > 1. n >= 1.
double psi_seq(std::int64_t n, const PolicyParams& params);

// prod_{i=1..k} psi(i) = Psi*(1)/Psi*(k+1), evaluated in log space; 1 at k=0.
double hold_survival(std::int64_t k, const PolicyParams& params);

// Partial sums S_M = sum_{m<=M} m^2 / Psi*(m) for M = 1..m_max, the series
// whose convergence the eta condition guarantees. Per-term log-space.
std::vector<double> summability_partial(const PolicyParams& params, std::int64_t m_max);

// Scheduling decision at an arrival epoch.
//   ServeFinite  - server stays on its finite-rate buffer (non-arrival rule)
//   FlushBuffer1 - whole buffer-1 content moves to buffer 2 instantly
//   FlushBuffer3 - whole buffer-3 content moves to buffer 4 instantly
//   Hold         - arriving job joins the infinite-rate buffer and waits
enum class PolicyAction { kServeFinite, kFlushBuffer1, kFlushBuffer3, kHold };

// The randomized branch applies when the arrival's buffer shares its server
// with a busy finite-rate buffer and the downstream buffer is empty; only
// then does the engine spend a uniform draw.
bool rule_iv_applies(const QState& state, int buffer);

// Decision for the post-arrival state. buffer is 1 or 3; u is consumed only
// when rule_iv_applies. Hold survives with probability psi(m), m = the
// post-arrival buffer content.
PolicyAction decide_arrival(int buffer, const QState& state, double u,
                            const PolicyParams& params);

// Applies the forced instant transfers until none is enabled, buffer 1 rule
// first: flush 1->2 when q1>0 and (q4==0 or q2>0); flush 3->4 when q3>0 and
// (q2==0 or q4>0). At most two flushes; preserves the L1 norm; the result
// satisfies QState::stable(). Returns moved counts via flushed1/flushed3;
// both_enabled reports whether both rules were simultaneously enabled on
// entry (never happens one event past a stable state).
struct FlushResult {
  std::int64_t flushed1 = 0;
  std::int64_t flushed3 = 0;
  bool both_enabled = false;
};
FlushResult flush_closure_in_place(QState& state);
QState flush_closure(QState state);

// Memoized psi(n) lookup for the simulation hot path; falls back to the
// closed form above the table.
class PsiTable {
 public:
  explicit PsiTable(const PolicyParams& params, std::size_t table_size = 1 << 16);
  double operator()(std::int64_t n) const;

 private:
  PolicyParams params_;
  std::vector<double> table_;  // table_[n] = psi(n+1)
};

}  // namespace ksrs
