#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace nsfde {

// Two-sample Kolmogorov-Smirnov statistic D = sup_x |F_a(x) - F_b(x)|.
inline double two_sample_ks(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("two_sample_ks: samples must be nonempty");
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
  return d;
}

// Rejection threshold at level alpha: c(alpha) sqrt((n+m)/(n m)); the 1%
// coefficient is c = 1.628.
inline double ks_threshold(std::size_t n, std::size_t m, double c = 1.628) {
  return c * std::sqrt(static_cast<double>(n + m) /
                       (static_cast<double>(n) * static_cast<double>(m)));
}

inline double mean(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

// Monte Carlo estimate of E[XY] for centered (X,Y) plus its standard error,
// from the sample second/fourth moments.
struct MomentEstimate {
  double value = 0.0;
  double se = 0.0;
};

inline MomentEstimate product_moment(const std::vector<double>& x,
                                     const std::vector<double>& y) {
  if (x.size() != y.size() || x.empty())
    throw std::invalid_argument("product_moment: size mismatch");
  const double n = static_cast<double>(x.size());
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = x[i] * y[i];
    s1 += p;
    s2 += p * p;
  }
  const double m = s1 / n;
  const double var = std::max(s2 / n - m * m, 0.0);
  return MomentEstimate{m, std::sqrt(var / n)};
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  return v.size() % 2 == 1 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

}  // namespace nsfde
