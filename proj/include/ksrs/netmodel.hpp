#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace ksrs {

struct PolicyParams;  // policy.hpp

// Service rate of one class; infinite-rate classes hand their whole buffer
// downstream the instant the policy serves them.
struct ServiceRate {
  static ServiceRate finite(double rate);
  static ServiceRate infinite();

  bool is_infinite = false;
  double rate = 0.0;  // jobs/time, valid only when finite

  bool operator==(const ServiceRate&) const = default;
};

// Immutable description of an open multiclass network: Poisson arrivals,
// exponential services, deterministic routing. Values are shared freely
// across workers once built.
struct NetworkSpec {
  int n_classes = 0;
  int n_servers = 0;
  std::vector<double> arrival_rates;               // per class
  std::vector<ServiceRate> service_rates;          // per class
  std::vector<std::vector<int>> constituency;      // server x class, 0/1
  std::vector<std::vector<int>> routing;           // class x class, 0/1
};

// Queue vector of the four-buffer instance. Buffers are 0-based internally,
// 1-based in all user-facing I/O.
struct QState {
  std::array<std::int64_t, 4> q{0, 0, 0, 0};

  std::int64_t norm1() const { return q[0] + q[1] + q[2] + q[3]; }

  // Holds at every post-closure event epoch: a held buffer-1 job requires
  // buffer 4 busy and buffer 2 empty, and symmetrically for buffer 3.
  bool stable() const {
    if (q[0] > 0 && !(q[3] > 0 && q[1] == 0)) return false;
    if (q[2] > 0 && !(q[1] > 0 && q[3] == 0)) return false;
    return true;
  }

  bool operator==(const QState&) const = default;
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

// The symmetric two-server four-class instance: unit-rate arrivals to
// buffers 1 and 3, infinite service at 1 and 3, rate mu at the exit buffers
// 2 and 4, server 1 = {1,4}, server 2 = {2,3}, routes 1->2 and 3->4.
NetworkSpec build_ksrs(const PolicyParams& params);

ValidationReport validate_network(const NetworkSpec& spec);

// True iff spec has exactly the four-buffer topology above (any finite exit
// rate, any positive arrival rates at 1 and 3).
bool is_ksrs(const NetworkSpec& spec);

// Per-server offered load (rho1, rho2); infinite-rate classes contribute
// zero. Throws std::invalid_argument for non-KSRS topologies.
std::pair<double, double> traffic_intensities(const NetworkSpec& spec);

// Effective arrival rate per class: external rate plus routed-in rates
// (finite for open networks).
std::vector<double> effective_arrival_rates(const NetworkSpec& spec);

// JSON echo carried in every experiment result; mu uses the "inf" sentinel
// for infinite rates.
nlohmann::json to_json(const NetworkSpec& spec);
NetworkSpec network_from_json(const nlohmann::json& j);

}  // namespace ksrs
