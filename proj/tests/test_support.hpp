#pragma once

// Shared oracles and statistical helpers for the test suites. Everything
// here is independent of the library's implementation paths it checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

#include "fedrr/common.hpp"
#include "fedrr/linalg.hpp"

namespace testsupport {

// Regularized incomplete gamma Q(a,x) = 1 - P(a,x), series + continued
// fraction (Lentz), good to ~1e-12.
inline double gamma_q(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_q: bad arguments");
  if (x == 0.0) return 1.0;
  const double lg = std::lgamma(a);
  if (x < a + 1.0) {
    // series for P(a,x)
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 0; n < 500; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::fabs(del) < std::fabs(sum) * 1e-15) break;
    }
    const double p = sum * std::exp(-x + a * std::log(x) - lg);
    return 1.0 - p;
  }
  // continued fraction for Q(a,x)
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-15) break;
  }
  return std::exp(-x + a * std::log(x) - lg) * h;
}

// Survival function of the chi-square distribution.
inline double chi2_sf(double x, double dof) { return gamma_q(dof / 2.0, x / 2.0); }

// Pearson statistic against equal cell probabilities.
inline double chi2_uniform_stat(const std::vector<long>& counts) {
  long total = 0;
  for (long c : counts) total += c;
  const double expected = static_cast<double>(total) / counts.size();
  double stat = 0.0;
  for (long c : counts) {
    const double d = c - expected;
    stat += d * d / expected;
  }
  return stat;
}

// Kolmogorov-Smirnov test of a sample against a continuous CDF. Returns the
// asymptotic p-value with the usual finite-n correction.
inline double ks_pvalue(std::vector<double> sample, const std::function<double(double)>& cdf) {
  std::sort(sample.begin(), sample.end());
  const std::size_t n = sample.size();
  double dmax = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = cdf(sample[i]);
    dmax = std::max(dmax, std::fabs(f - static_cast<double>(i) / n));
    dmax = std::max(dmax, std::fabs(static_cast<double>(i + 1) / n - f));
  }
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  const double lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * dmax;
  double p = 0.0;
  double sign = 1.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    p += 2.0 * sign * term;
    sign = -sign;
    if (term < 1e-12) break;
  }
  return std::clamp(p, 0.0, 1.0);
}

// Dense-projector oracle: || (I - B B^T) delta ||_2 with the p x p projector
// materialized, the form project_residual must never build.
inline double dense_residual(const fedrr::ParamVector& delta,
                             const fedrr::SubspaceBasis& basis) {
  const std::size_t p = basis.rows;
  const std::size_t q = basis.q;
  std::vector<double> projector(p * p, 0.0);
  for (std::size_t i = 0; i < p; ++i) projector[i * p + i] = 1.0;
  for (std::size_t j = 0; j < q; ++j) {
    const double* u = basis.column(j);
    for (std::size_t r = 0; r < p; ++r) {
      for (std::size_t c = 0; c < p; ++c) projector[r * p + c] -= u[r] * u[c];
    }
  }
  double ss = 0.0;
  for (std::size_t r = 0; r < p; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < p; ++c) acc += projector[r * p + c] * delta[c];
    ss += acc * acc;
  }
  return std::sqrt(ss);
}

// Central finite differences of a scalar function of the parameters.
inline fedrr::ParamVector finite_difference_gradient(
    const std::function<double(const fedrr::ParamVector&)>& f, fedrr::ParamVector at,
    double h = 1e-6) {
  fedrr::ParamVector grad(at.size());
  for (std::size_t i = 0; i < at.size(); ++i) {
    const double orig = at[i];
    at[i] = orig + h;
    const double hi = f(at);
    at[i] = orig - h;
    const double lo = f(at);
    at[i] = orig;
    grad[i] = (hi - lo) / (2.0 * h);
  }
  return grad;
}

inline double l2_norm(const fedrr::ParamVector& v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  return std::sqrt(ss);
}

inline double rel_err(double got, double want) {
  return std::fabs(got - want) / std::max(1e-300, std::fabs(want));
}

}  // namespace testsupport
