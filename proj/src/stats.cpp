#include "ksrs/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ksrs {

double RunningStat::stderr_mean() const {
  if (n_ < 2) return 0.0;
  return std::sqrt(variance() / static_cast<double>(n_));
}

double binomial_stderr(double p_hat, std::uint64_t n) {
  if (n == 0) return 0.0;
  return std::sqrt(p_hat * (1.0 - p_hat) / static_cast<double>(n));
}

Interval wilson_ci(std::uint64_t successes, std::uint64_t n, double z) {
  if (n == 0) return {0.0, 1.0};
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double center = (p + z2 / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("linear_fit: need two same-length samples of size >= 2");
  const double n = static_cast<double>(x.size());
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("linear_fit: degenerate abscissa");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return fit;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile: empty sample");
  q = std::clamp(q, 0.0, 1.0);
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

double autocorr_lag1(const std::vector<double>& values) {
  if (values.size() < 3) throw std::invalid_argument("autocorr_lag1: sample too small");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double d = values[i] - mean;
    den += d * d;
    if (i + 1 < values.size()) num += d * (values[i + 1] - mean);
  }
  return den > 0.0 ? num / den : 0.0;
}

double kolmogorov_q(double lambda) {
  if (lambda <= 0.0) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    sum += sign * term;
    sign = -sign;
    if (term < 1e-16 * std::abs(sum)) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = na * nb / (na + nb);
  const double sq = std::sqrt(ne);
  KsResult r;
  r.d = d;
  r.p_value = kolmogorov_q((sq + 0.12 + 0.11 / sq) * d);
  return r;
}

NormHistogram::NormHistogram() : w_(static_cast<std::size_t>(bin_count()), 0.0) {}

int NormHistogram::bin_count() {
  // unit bins + one geometric bin per doubling of the remaining int64 range
  return static_cast<int>(kUnitBins) + (63 - 12);
}

int NormHistogram::bin_index(std::int64_t value) {
  if (value < 0) throw std::invalid_argument("NormHistogram: negative value");
  if (value < kUnitBins) return static_cast<int>(value);
  int k = 0;
  std::int64_t lo = kUnitBins;
  while (value >= lo * 2 && k < 63 - 13) {
    lo *= 2;
    ++k;
  }
  return static_cast<int>(kUnitBins) + k;
}

std::int64_t NormHistogram::bin_lo(int i) {
  if (i < kUnitBins) return i;
  return kUnitBins << (i - kUnitBins);
}

std::int64_t NormHistogram::bin_hi(int i) {
  if (i < kUnitBins) return i;
  return (kUnitBins << (i - kUnitBins + 1)) - 1;
}

void NormHistogram::add(std::int64_t value, double weight) {
  w_[static_cast<std::size_t>(bin_index(value))] += weight;
  total_ += weight;
}

void NormHistogram::merge(const NormHistogram& other) {
  for (std::size_t i = 0; i < w_.size(); ++i) w_[i] += other.w_[i];
  total_ += other.total_;
}

int NormHistogram::max_used_bin() const {
  for (int i = bin_count() - 1; i >= 0; --i)
    if (w_[static_cast<std::size_t>(i)] > 0.0) return i;
  return -1;
}

double NormHistogram::moment(int p) const {
  if (total_ <= 0.0) return 0.0;
  double acc = 0.0;
  for (int i = 0; i < bin_count(); ++i) {
    const double w = w_[static_cast<std::size_t>(i)];
    if (w == 0.0) continue;
    const double rep = i < kUnitBins
                           ? static_cast<double>(i)
                           : std::sqrt(static_cast<double>(bin_lo(i)) *
                                       static_cast<double>(bin_hi(i)));
    acc += w * std::pow(rep, p);
  }
  return acc / total_;
}

}  // namespace ksrs
