#include <doctest.h>

#include "ksrs/netmodel.hpp"
#include "ksrs/policy.hpp"

using namespace ksrs;

TEST_CASE("build_ksrs produces the symmetric four-class instance") {
  const PolicyParams p = derive_params(0.1);
  const NetworkSpec spec = build_ksrs(p);
  CHECK(spec.n_classes == 4);
  CHECK(spec.n_servers == 2);
  CHECK(spec.arrival_rates == std::vector<double>{1.0, 0.0, 1.0, 0.0});
  CHECK(spec.service_rates[0].is_infinite);
  CHECK(spec.service_rates[2].is_infinite);
  CHECK(spec.service_rates[1].rate == doctest::Approx(1.1));
  CHECK(spec.service_rates[3].rate == doctest::Approx(1.1));
  // exit buffers are 2 and 4 (all-zero routing rows)
  CHECK(spec.routing[1] == std::vector<int>{0, 0, 0, 0});
  CHECK(spec.routing[3] == std::vector<int>{0, 0, 0, 0});
  CHECK(is_ksrs(spec));

  // every class sits at exactly one server
  for (int i = 0; i < 4; ++i)
    CHECK(spec.constituency[0][i] + spec.constituency[1][i] == 1);

  // open network: four routing powers vanish
  auto power = spec.routing;
  for (int k = 1; k < 4; ++k) {
    std::vector<std::vector<int>> next(4, std::vector<int>(4, 0));
    for (int i = 0; i < 4; ++i)
      for (int m = 0; m < 4; ++m)
        if (power[i][m])
          for (int j = 0; j < 4; ++j)
            if (spec.routing[m][j]) next[i][j] = 1;
    power = next;
  }
  for (const auto& row : power)
    for (int v : row) CHECK(v == 0);
}

TEST_CASE("validate_network flags the contract violations") {
  const PolicyParams p = derive_params(0.1);
  const NetworkSpec good = build_ksrs(p);
  CHECK(validate_network(good).ok());

  // the constructor output validates across the admissible knob range
  for (double delta : {0.45, 0.3, 0.2, 0.1, 0.02, 1e-3, 1e-4, 1e-6})
    CHECK(validate_network(build_ksrs(derive_params(delta))).ok());

  SUBCASE("exit buffer with infinite rate") {
    NetworkSpec bad = good;
    bad.service_rates[1] = ServiceRate::infinite();
    const auto report = validate_network(bad);
    REQUIRE(!report.ok());
    bool found = false;
    for (const auto& v : report.violations)
      if (v.find("exit buffer") != std::string::npos) found = true;
    CHECK(found);
  }
  SUBCASE("class assigned to two servers") {
    NetworkSpec bad = good;
    bad.constituency[0][1] = 1;
    const auto report = validate_network(bad);
    REQUIRE(!report.ok());
    bool found = false;
    for (const auto& v : report.violations)
      if (v.find("multiply assigned") != std::string::npos) found = true;
    CHECK(found);
  }
  SUBCASE("routing cycle is rejected") {
    NetworkSpec bad = good;
    bad.routing[1][0] = 1;  // 2 -> 1 closes a loop
    const auto report = validate_network(bad);
    REQUIRE(!report.ok());
  }
  SUBCASE("row with two successors is rejected") {
    NetworkSpec bad = good;
    bad.routing[0][2] = 1;
    CHECK(!validate_network(bad).ok());
  }
}

TEST_CASE("traffic intensities are the reciprocal exit rates") {
  const NetworkSpec spec = build_ksrs(derive_params(0.1));
  const auto [rho1, rho2] = traffic_intensities(spec);
  CHECK(rho1 == doctest::Approx(1.0 / 1.1).epsilon(1e-12));
  CHECK(rho2 == doctest::Approx(1.0 / 1.1).epsilon(1e-12));

  NetworkSpec half = spec;
  half.service_rates[1] = ServiceRate::finite(2.0);
  half.service_rates[3] = ServiceRate::finite(2.0);
  const auto [a, b] = traffic_intensities(half);
  CHECK(a == doctest::Approx(0.5));
  CHECK(b == doctest::Approx(0.5));

  // load tends to one as the margin shrinks
  double prev = 0.0;
  for (double delta : {0.2, 0.1, 0.05, 0.01, 0.001}) {
    const auto [r1, r2] = traffic_intensities(build_ksrs(derive_params(delta)));
    CHECK(r1 > prev);
    CHECK(r1 == doctest::Approx(1.0 / (1.0 + delta)).epsilon(1e-12));
    CHECK(r1 == r2);
    prev = r1;
  }

  NetworkSpec other = spec;
  other.constituency = {{1, 1, 0, 0}, {0, 0, 1, 1}};
  CHECK_THROWS_AS(traffic_intensities(other), std::invalid_argument);
}

TEST_CASE("network JSON round-trips with the inf sentinel") {
  const NetworkSpec spec = build_ksrs(derive_params(0.2));
  const nlohmann::json j = to_json(spec);
  CHECK(j["mu"][0] == "inf");
  CHECK(j["mu"][1] == doctest::Approx(1.2));
  const NetworkSpec back = network_from_json(j);
  CHECK(is_ksrs(back));
  CHECK(back.service_rates[0].is_infinite);
  CHECK(back.service_rates[3].rate == doctest::Approx(1.2));
  CHECK(back.constituency == spec.constituency);
  CHECK(back.routing == spec.routing);
}

TEST_CASE("QState stability predicate") {
  CHECK(QState{{0, 0, 0, 0}}.stable());
  CHECK(QState{{2, 0, 0, 3}}.stable());
  CHECK(QState{{0, 3, 2, 0}}.stable());
  CHECK(!QState{{1, 1, 0, 1}}.stable());   // held jobs need an empty buffer 2
  CHECK(!QState{{1, 0, 0, 0}}.stable());   // held jobs need a busy buffer 4
  CHECK(!QState{{0, 0, 1, 1}}.stable());   // mirror
  CHECK(!QState{{1, 0, 1, 1}}.stable());   // both held buffers can never coexist
}
