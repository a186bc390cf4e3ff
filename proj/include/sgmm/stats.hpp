#pragma once

#include <functional>
#include <vector>

namespace sgmm::stats {

/// Regularized lower incomplete gamma P(a, x). Series for x < a + 1,
/// Lentz continued fraction for the complement otherwise.
double gamma_p(double a, double x);

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
double gamma_q(double a, double x);

double chi2_cdf(double x, double dof);

/// Upper tail 1 - cdf, computed without cancellation.
double chi2_sf(double x, double dof);

/// Inverse of chi2_cdf by bracketed bisection; relative accuracy ~1e-13.
double chi2_quantile(double prob, double dof);

/// Kolmogorov-Smirnov statistic sup |F_n - F| of `samples` against `cdf`.
double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf);

/// Asymptotic one-sample KS critical value sqrt(-log(alpha/2)/2) / sqrt(n).
double ks_critical_value(std::size_t n, double alpha);

}  // namespace sgmm::stats
