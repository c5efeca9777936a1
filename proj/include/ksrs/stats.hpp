#pragma once

#include <cstdint>
#include <vector>

namespace ksrs {

// Streaming mean/variance (Welford).
class RunningStat {
 public:
  void add(double x) {
    ++n_;
    const double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
  }
  std::uint64_t count() const { return n_; }
  double mean() const { return mean_; }
  double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  double stderr_mean() const;

 private:
  std::uint64_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

double binomial_stderr(double p_hat, std::uint64_t n);

// Wilson score interval for a binomial proportion (z = 1.96 for 95%).
struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};
Interval wilson_ci(std::uint64_t successes, std::uint64_t n, double z = 1.96);

// Least-squares fit y = intercept + slope * x.
struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};
LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y);

double median(std::vector<double> values);
double quantile(std::vector<double> values, double q);

// Lag-1 sample autocorrelation.
double autocorr_lag1(const std::vector<double>& values);

// Survival function of the Kolmogorov distribution,
// Q(lambda) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 lambda^2).
double kolmogorov_q(double lambda);

// Two-sample Kolmogorov-Smirnov test; p-value via the asymptotic Kolmogorov
// distribution with Stephens' finite-sample correction.
struct KsResult {
  double d = 0.0;
  double p_value = 0.0;
};
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);

// Occupation histogram over non-negative integers: unit bins below 4096,
// geometric (x2) bins above, so deep-tail mass is kept at bounded memory.
class NormHistogram {
 public:
  static constexpr std::int64_t kUnitBins = 4096;

  NormHistogram();
  void add(std::int64_t value, double weight);
  void merge(const NormHistogram& other);

  static int bin_index(std::int64_t value);
  // Inclusive integer bounds of bin i.
  static std::int64_t bin_lo(int i);
  static std::int64_t bin_hi(int i);
  static int bin_count();

  double total() const { return total_; }
  double weight(int i) const { return w_[static_cast<std::size_t>(i)]; }
  int max_used_bin() const;

  // Time-average moment sum_v v^p * weight(v) / total, bins above the unit
  // range contributing at their geometric midpoint.
  double moment(int p) const;

 private:
  std::vector<double> w_;
  double total_ = 0.0;
};

}  // namespace ksrs
