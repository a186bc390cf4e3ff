#include "sgmm/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sgmm/error.hpp"

namespace sgmm::stats {

namespace {

constexpr double kEps = 1e-16;
constexpr int kMaxIter = 100000;

double log_prefactor(double a, double x) { return -x + a * std::log(x) - std::lgamma(a); }

double series_p(double a, double x) {
    double ap = a;
    double del = 1.0 / a;
    double sum = del;
    for (int n = 0; n < kMaxIter; ++n) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::abs(del) < std::abs(sum) * kEps) break;
    }
    return sum * std::exp(log_prefactor(a, x));
}

double continued_fraction_q(double a, double x) {
    constexpr double tiny = std::numeric_limits<double>::min() / kEps;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < kMaxIter; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return std::exp(log_prefactor(a, x)) * h;
}

void check_args(double a, double x) {
    if (!(a > 0.0) || !(x >= 0.0)) {
        throw ParameterError("incomplete gamma requires a > 0 and x >= 0");
    }
}

}  // namespace

double gamma_p(double a, double x) {
    check_args(a, x);
    if (x == 0.0) return 0.0;
    if (std::isinf(x)) return 1.0;
    return x < a + 1.0 ? series_p(a, x) : 1.0 - continued_fraction_q(a, x);
}

double gamma_q(double a, double x) {
    check_args(a, x);
    if (x == 0.0) return 1.0;
    if (std::isinf(x)) return 0.0;
    return x < a + 1.0 ? 1.0 - series_p(a, x) : continued_fraction_q(a, x);
}

double chi2_cdf(double x, double dof) {
    if (x <= 0.0) return 0.0;
    return gamma_p(0.5 * dof, 0.5 * x);
}

double chi2_sf(double x, double dof) {
    if (x <= 0.0) return 1.0;
    return gamma_q(0.5 * dof, 0.5 * x);
}

double chi2_quantile(double prob, double dof) {
    if (!(dof > 0.0)) throw ParameterError("chi-squared degrees of freedom must be positive");
    if (!(prob >= 0.0 && prob < 1.0)) {
        throw ParameterError("chi-squared quantile probability must lie in [0, 1)");
    }
    if (prob == 0.0) return 0.0;
    // Work on whichever tail is smaller to keep the target well resolved.
    const bool upper = prob > 0.5;
    const double target = upper ? 1.0 - prob : prob;
    auto tail = [&](double x) { return upper ? chi2_sf(x, dof) : chi2_cdf(x, dof); };
    double lo = 0.0;
    double hi = dof + 10.0 * std::sqrt(2.0 * dof) + 10.0;
    while (upper ? tail(hi) > target : tail(hi) < target) {
        lo = hi;
        hi *= 2.0;
    }
    for (int i = 0; i < 400 && hi - lo > 1e-14 * hi; ++i) {
        const double mid = 0.5 * (lo + hi);
        const bool below = upper ? tail(mid) > target : tail(mid) < target;
        (below ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
    if (samples.empty()) throw EmptyDatasetError("KS statistic of an empty sample");
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double f = cdf(samples[i]);
        d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
    }
    return d;
}

double ks_critical_value(std::size_t n, double alpha) {
    return std::sqrt(-0.5 * std::log(0.5 * alpha)) / std::sqrt(static_cast<double>(n));
}

}  // namespace sgmm::stats
