#include "ksrs/netmodel.hpp"

#include <cmath>
#include <stdexcept>

#include "ksrs/policy.hpp"

namespace ksrs {

ServiceRate ServiceRate::finite(double rate) {
  if (!(rate > 0.0) || !std::isfinite(rate))
    throw std::invalid_argument("finite service rate must be strictly positive");
  return ServiceRate{false, rate};
}

ServiceRate ServiceRate::infinite() { return ServiceRate{true, 0.0}; }

NetworkSpec build_ksrs(const PolicyParams& params) {
  NetworkSpec spec;
  spec.n_classes = 4;
  spec.n_servers = 2;
  spec.arrival_rates = {1.0, 0.0, 1.0, 0.0};
  spec.service_rates = {ServiceRate::infinite(), ServiceRate::finite(params.mu),
                        ServiceRate::infinite(), ServiceRate::finite(params.mu)};
  // server 1 serves classes 1 and 4, server 2 serves classes 2 and 3
  spec.constituency = {{1, 0, 0, 1}, {0, 1, 1, 0}};
  // routes 1->2 and 3->4; buffers 2 and 4 exit
  spec.routing = {{0, 1, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 1}, {0, 0, 0, 0}};
  return spec;
}

namespace {

bool shape_ok(const NetworkSpec& s) {
  const std::size_t n = static_cast<std::size_t>(s.n_classes);
  const std::size_t j = static_cast<std::size_t>(s.n_servers);
  if (s.n_classes <= 0 || s.n_servers <= 0) return false;
  if (s.arrival_rates.size() != n || s.service_rates.size() != n) return false;
  if (s.constituency.size() != j || s.routing.size() != n) return false;
  for (const auto& row : s.constituency)
    if (row.size() != n) return false;
  for (const auto& row : s.routing)
    if (row.size() != n) return false;
  return true;
}

// R^n as reachability on 0/1 entries.
std::vector<std::vector<int>> bool_matmul(const std::vector<std::vector<int>>& a,
                                          const std::vector<std::vector<int>>& b) {
  const std::size_t n = a.size();
  std::vector<std::vector<int>> out(n, std::vector<int>(n, 0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k)
      if (a[i][k])
        for (std::size_t j = 0; j < n; ++j)
          if (b[k][j]) out[i][j] = 1;
  return out;
}

bool all_zero(const std::vector<std::vector<int>>& m) {
  for (const auto& row : m)
    for (int v : row)
      if (v) return false;
  return true;
}

}  // namespace

ValidationReport validate_network(const NetworkSpec& spec) {
  ValidationReport report;
  if (!shape_ok(spec)) {
    report.violations.push_back("inconsistent dimensions");
    return report;
  }
  const int n = spec.n_classes;

  for (int i = 0; i < n; ++i) {
    int servers = 0;
    for (int s = 0; s < spec.n_servers; ++s) servers += spec.constituency[s][i] != 0;
    if (servers == 0)
      report.violations.push_back("class " + std::to_string(i + 1) + " has no server");
    else if (servers > 1)
      report.violations.push_back("class " + std::to_string(i + 1) + " multiply assigned");
  }

  for (int i = 0; i < n; ++i) {
    if (spec.arrival_rates[i] < 0.0 || !std::isfinite(spec.arrival_rates[i]))
      report.violations.push_back("class " + std::to_string(i + 1) +
                                  " arrival rate negative or non-finite");
    int next = 0;
    for (int j = 0; j < n; ++j) next += spec.routing[i][j] != 0;
    if (next > 1)
      report.violations.push_back("class " + std::to_string(i + 1) +
                                  " routes to more than one class");
    if (next == 0 && spec.service_rates[i].is_infinite)
      report.violations.push_back("exit buffer " + std::to_string(i + 1) +
                                  " must have finite rate");
    if (!spec.service_rates[i].is_infinite && !(spec.service_rates[i].rate > 0.0))
      report.violations.push_back("class " + std::to_string(i + 1) +
                                  " finite service rate not positive");
  }

  auto power = spec.routing;
  for (int k = 1; k < n; ++k) power = bool_matmul(power, spec.routing);
  if (!all_zero(power)) report.violations.push_back("routing is not open (R^N != 0)");

  return report;
}

bool is_ksrs(const NetworkSpec& spec) {
  if (!shape_ok(spec) || spec.n_classes != 4 || spec.n_servers != 2) return false;
  if (spec.constituency != std::vector<std::vector<int>>{{1, 0, 0, 1}, {0, 1, 1, 0}})
    return false;
  if (spec.routing != std::vector<std::vector<int>>{{0, 1, 0, 0},
                                                    {0, 0, 0, 0},
                                                    {0, 0, 0, 1},
                                                    {0, 0, 0, 0}})
    return false;
  if (!(spec.arrival_rates[0] > 0.0) || spec.arrival_rates[1] != 0.0 ||
      !(spec.arrival_rates[2] > 0.0) || spec.arrival_rates[3] != 0.0)
    return false;
  if (!spec.service_rates[0].is_infinite || !spec.service_rates[2].is_infinite) return false;
  if (spec.service_rates[1].is_infinite || spec.service_rates[3].is_infinite) return false;
  return true;
}

std::vector<double> effective_arrival_rates(const NetworkSpec& spec) {
  const int n = spec.n_classes;
  // lambda_eff = sum_k (R^T)^k lambda; routing is nilpotent so n passes close it.
  std::vector<double> eff = spec.arrival_rates;
  std::vector<double> layer = spec.arrival_rates;
  for (int pass = 0; pass < n; ++pass) {
    std::vector<double> next(n, 0.0);
    for (int i = 0; i < n; ++i)
      if (layer[i] != 0.0)
        for (int j = 0; j < n; ++j)
          if (spec.routing[i][j]) next[j] += layer[i];
    for (int j = 0; j < n; ++j) eff[j] += next[j];
    layer = std::move(next);
  }
  return eff;
}

std::pair<double, double> traffic_intensities(const NetworkSpec& spec) {
  if (!is_ksrs(spec))
    throw std::invalid_argument("traffic_intensities: unsupported topology (not the KSRS instance)");
  const auto eff = effective_arrival_rates(spec);
  std::array<double, 2> rho{0.0, 0.0};
  for (int s = 0; s < 2; ++s)
    for (int i = 0; i < 4; ++i)
      if (spec.constituency[s][i] && !spec.service_rates[i].is_infinite)
        rho[s] += eff[i] / spec.service_rates[i].rate;
  return {rho[0], rho[1]};
}

nlohmann::json to_json(const NetworkSpec& spec) {
  nlohmann::json mu = nlohmann::json::array();
  for (const auto& r : spec.service_rates) {
    if (r.is_infinite)
      mu.push_back("inf");
    else
      mu.push_back(r.rate);
  }
  return nlohmann::json{{"lambda", spec.arrival_rates},
                        {"mu", mu},
                        {"C", spec.constituency},
                        {"R", spec.routing}};
}

NetworkSpec network_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  spec.arrival_rates = j.at("lambda").get<std::vector<double>>();
  for (const auto& v : j.at("mu")) {
    if (v.is_string() && v.get<std::string>() == "inf")
      spec.service_rates.push_back(ServiceRate::infinite());
    else
      spec.service_rates.push_back(ServiceRate::finite(v.get<double>()));
  }
  spec.constituency = j.at("C").get<std::vector<std::vector<int>>>();
  spec.routing = j.at("R").get<std::vector<std::vector<int>>>();
  spec.n_classes = static_cast<int>(spec.arrival_rates.size());
  spec.n_servers = static_cast<int>(spec.constituency.size());
  return spec;
}

}  // namespace ksrs
