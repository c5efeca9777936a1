#include "ksrs/policy.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ksrs {

Regime regime(const PolicyParams& params) {
  if (params.eta_condition_holds) return Regime::kCertified;
  if (params.second_moment_holds) return Regime::kSecondMoment;
  return Regime::kExploratory;
}

const char* regime_name(Regime r) {
  switch (r) {
    case Regime::kCertified: return "certified";
    case Regime::kSecondMoment: return "second-moment";
    case Regime::kExploratory: return "exploratory";
  }
  return "unknown";
}

PolicyParams derive_params(double delta) {
  if (!(delta > 0.0) || !std::isfinite(delta))
    throw std::domain_error("derive_params: delta must be a positive real");
  if (delta >= 0.5) {
    std::string reason = delta >= 1.0 ? "rho <= 1/2 and beta1 <= 1" : "beta1 <= 1";
    throw std::domain_error("derive_params: delta=" + std::to_string(delta) +
                            " outside (0, 1/2): " + reason);
  }
  PolicyParams p;
  p.delta = delta;
  p.mu = 1.0 + delta;
  p.rho = 1.0 / p.mu;
  p.gamma2 = 1.0 / delta;
  p.gamma4 = 1.0 / delta;
  p.gamma24 = 1.0 / (delta * delta);
  p.gamma = p.gamma4 + p.gamma24;
  p.beta1 = 0.25 * p.gamma24;
  p.beta2 = 4.0 * p.gamma24;
  p.ln_beta1 = std::log(p.beta1);
  p.ln_beta2 = std::log(p.beta2);
  p.eta = p.ln_beta1 / p.ln_beta2;
  p.c = p.beta1;
  p.hold_exponent = 0.5 * p.eta * p.ln_beta1;
  p.eta_condition_holds = check_eta_condition(p);
  p.second_moment_holds = p.eta * p.ln_beta1 > 4.0;
  return p;
}

bool check_eta_condition(const PolicyParams& params) {
  return params.eta > std::sqrt(12.0 / std::log(params.c));
}

nlohmann::json to_json(const PolicyParams& p) {
  return nlohmann::json{{"delta", p.delta},
                        {"mu", p.mu},
                        {"rho", p.rho},
                        {"gamma2", p.gamma2},
                        {"gamma4", p.gamma4},
                        {"gamma24", p.gamma24},
                        {"gamma", p.gamma},
                        {"beta1", p.beta1},
                        {"beta2", p.beta2},
                        {"eta", p.eta},
                        {"c", p.c},
                        {"hold_exponent", p.hold_exponent},
                        {"eta_condition_holds", p.eta_condition_holds},
                        {"second_moment_holds", p.second_moment_holds},
                        {"regime", regime_name(regime(p))}};
}

double big_psi(double s) {
  if (s < 0.0 || !std::isfinite(s)) throw std::domain_error("big_psi: s must be >= 0");
  if (s == 0.0) return 0.0;
  const double l = std::log(s);
  return std::exp(l * l);
}

double ln_big_psi(double s) {
  if (!(s > 0.0)) throw std::domain_error("ln_big_psi: s must be > 0");
  const double l = std::log(s);
  return l * l;
}

double ln_psi_star(double s, const PolicyParams& params) {
  if (!(s >= 1.0)) throw std::domain_error("ln_psi_star: s must be >= 1");
  // ((ln b1 + eta ln s)^2 - (eta ln s)^2) / 4, expanded so the quadratic
  // terms cancel exactly instead of catastrophically.
  return 0.25 * params.ln_beta1 * (params.ln_beta1 + 2.0 * params.eta * std::log(s));
}

double psi_star(double s, const PolicyParams& params) {
  return std::exp(ln_psi_star(s, params));
}

double psi_seq(std::int64_t n, const PolicyParams& params) {
  if (n < 1) throw std::domain_error("psi_seq: n must be >= 1");
  const double dn = static_cast<double>(n);
  // exp(ln Psi*(n) - ln Psi*(n+1)); the constant term cancels, leaving
  // -hold_exponent * ln((n+1)/n).
  return std::exp(-params.hold_exponent * std::log1p(1.0 / dn));
}

double hold_survival(std::int64_t k, const PolicyParams& params) {
  if (k < 0) throw std::domain_error("hold_survival: k must be >= 0");
  if (k == 0) return 1.0;
  return std::exp(-params.hold_exponent * std::log(static_cast<double>(k) + 1.0));
}

std::vector<double> summability_partial(const PolicyParams& params, std::int64_t m_max) {
  if (m_max < 1) throw std::domain_error("summability_partial: m_max must be >= 1");
  std::vector<double> sums;
  sums.reserve(static_cast<std::size_t>(m_max));
  double acc = 0.0;
  for (std::int64_t m = 1; m <= m_max; ++m) {
    const double lm = std::log(static_cast<double>(m));
    acc += std::exp(2.0 * lm - ln_psi_star(static_cast<double>(m), params));
    sums.push_back(acc);
  }
  return sums;
}

bool rule_iv_applies(const QState& state, int buffer) {
  if (buffer == 1) return state.q[0] > 0 && state.q[3] > 0 && state.q[1] == 0;
  if (buffer == 3) return state.q[2] > 0 && state.q[1] > 0 && state.q[3] == 0;
  throw std::invalid_argument("rule_iv_applies: buffer must be 1 or 3");
}

PolicyAction decide_arrival(int buffer, const QState& state, double u,
                            const PolicyParams& params) {
  if (buffer == 1) {
    if (rule_iv_applies(state, 1))
      return u < psi_seq(state.q[0], params) ? PolicyAction::kHold
                                             : PolicyAction::kFlushBuffer1;
    // non-idling / strict-priority flush (q4 == 0 or q2 > 0)
    return PolicyAction::kFlushBuffer1;
  }
  if (buffer == 3) {
    if (rule_iv_applies(state, 3))
      return u < psi_seq(state.q[2], params) ? PolicyAction::kHold
                                             : PolicyAction::kFlushBuffer3;
    return PolicyAction::kFlushBuffer3;
  }
  throw std::invalid_argument("decide_arrival: buffer must be 1 or 3");
}

FlushResult flush_closure_in_place(QState& state) {
  FlushResult r;
  const bool f1 = state.q[0] > 0 && (state.q[3] == 0 || state.q[1] > 0);
  const bool f3 = state.q[2] > 0 && (state.q[1] == 0 || state.q[3] > 0);
  r.both_enabled = f1 && f3;
  // Fixed order, buffer 1 before buffer 3; two passes close every state.
  for (int pass = 0; pass < 2; ++pass) {
    bool moved = false;
    if (state.q[0] > 0 && (state.q[3] == 0 || state.q[1] > 0)) {
      state.q[1] += state.q[0];
      r.flushed1 += state.q[0];
      state.q[0] = 0;
      moved = true;
    }
    if (state.q[2] > 0 && (state.q[1] == 0 || state.q[3] > 0)) {
      state.q[3] += state.q[2];
      r.flushed3 += state.q[2];
      state.q[2] = 0;
      moved = true;
    }
    if (!moved) break;
  }
  return r;
}

QState flush_closure(QState state) {
  flush_closure_in_place(state);
  return state;
}

PsiTable::PsiTable(const PolicyParams& params, std::size_t table_size) : params_(params) {
  table_.resize(table_size);
  for (std::size_t i = 0; i < table_size; ++i)
    table_[i] = psi_seq(static_cast<std::int64_t>(i) + 1, params_);
}

double PsiTable::operator()(std::int64_t n) const {
  if (n >= 1 && static_cast<std::size_t>(n) <= table_.size())
    return table_[static_cast<std::size_t>(n - 1)];
  return psi_seq(n, params_);
}

}  // namespace ksrs
