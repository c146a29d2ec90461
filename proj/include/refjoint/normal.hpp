#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/distributions/normal.hpp>

#include "refjoint/error.hpp"

// Standard normal helpers. The log-scale tails stay finite far past the
// point where erfc underflows, which the truncated-normal code relies on.
namespace refjoint::normal {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

inline double pdf(double x) { return std::exp(-0.5 * x * x - kLogSqrt2Pi); }
inline double log_pdf(double x) { return -0.5 * x * x - kLogSqrt2Pi; }

inline double cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }
inline double sf(double x) { return 0.5 * std::erfc(x * kInvSqrt2); }

/// log Phi(x). Below x = -30 erfc heads toward underflow, so the asymptotic
/// Mills-ratio series takes over (terms summed until below 1e-18).
inline double log_cdf(double x) {
    if (std::isnan(x)) return x;
    if (x == -std::numeric_limits<double>::infinity()) return x;
    if (x == std::numeric_limits<double>::infinity()) return 0.0;
    if (x > 5.0) return std::log1p(-0.5 * std::erfc(x * kInvSqrt2));
    if (x > -30.0) return std::log(0.5 * std::erfc(-x * kInvSqrt2));
    const double inv = 1.0 / (x * x);
    double term = 1.0;
    double series = 1.0;
    for (int k = 1; k < 40; ++k) {
        term *= -(2.0 * k - 1.0) * inv;
        series += term;
        if (std::abs(term) < 1e-18) break;
    }
    return -0.5 * x * x - std::log(-x) - kLogSqrt2Pi + std::log(series);
}

inline double log_sf(double x) { return log_cdf(-x); }

inline double quantile(double prob) {
    if (!(prob > 0.0 && prob < 1.0)) {
        throw InvalidArgument("normal quantile requires a probability in (0,1)");
    }
    static const boost::math::normal_distribution<double> standard;
    return boost::math::quantile(standard, prob);
}

/// Two-sided p-value 2*Phi(-|z|).
inline double two_sided_p(double z) { return std::min(1.0, 2.0 * sf(std::abs(z))); }

inline double log_add(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    const double hi = std::max(a, b);
    return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

/// log(exp(a) - exp(b)) for a >= b.
inline double log_sub(double a, double b) {
    if (b == -std::numeric_limits<double>::infinity()) return a;
    if (b >= a) return -std::numeric_limits<double>::infinity();
    const double d = b - a;
    return a + (d > -0.6931471805599453 ? std::log(-std::expm1(d)) : std::log1p(-std::exp(d)));
}

/// log P(lo < Z < hi) for a standard normal Z, accurate in both tails.
inline double log_interval_mass(double lo, double hi) {
    if (!(hi > lo)) return -std::numeric_limits<double>::infinity();
    if (lo >= 0.0) return log_sub(log_sf(lo), log_sf(hi));
    if (hi <= 0.0) return log_sub(log_cdf(hi), log_cdf(lo));
    return std::log(1.0 - sf(hi) - cdf(lo));
}

}  // namespace refjoint::normal
