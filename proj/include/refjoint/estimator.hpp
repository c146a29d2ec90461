#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "refjoint/error.hpp"
#include "refjoint/linalg.hpp"
#include "refjoint/normal.hpp"

namespace refjoint {

/// Per-covariate marginal regression coefficients of a standardized outcome
/// on standardized covariates, plus the original-study sample size.
struct MarginalSummary {
    Vector beta_m;
    std::int64_t n_o = 0;
    std::vector<std::string> ids;  // optional; empty or one label per coefficient

    Index p() const noexcept { return beta_m.size(); }
};

inline void validate(const MarginalSummary& s) {
    if (s.p() < 1) throw InvalidArgument("marginal summary is empty");
    if (s.n_o < 1) throw InvalidArgument("marginal summary needs a positive sample size");
    if (!s.beta_m.allFinite()) throw InvalidArgument("marginal summary has non-finite coefficients");
    if (!s.ids.empty() && static_cast<Index>(s.ids.size()) != s.p()) {
        throw DimensionMismatch("marginal summary ids do not match coefficient count");
    }
    // A marginal coefficient of standardized variables is a sample correlation.
    if (s.beta_m.cwiseAbs().maxCoeff() > 1.0 + 1e-6) {
        throw InvalidArgument("marginal coefficient exceeds 1 in absolute value; "
                              "expected per-standard-deviation units");
    }
}

enum class CovMethod { naive, var_corrected_gaussian, var_corrected_empirical, var_corrected_mle };

inline std::string_view to_string(CovMethod m) {
    switch (m) {
        case CovMethod::naive: return "naive";
        case CovMethod::var_corrected_gaussian: return "vc_gaussian";
        case CovMethod::var_corrected_empirical: return "vc_empirical";
        case CovMethod::var_corrected_mle: return "vc_mle";
    }
    return "unknown";
}

struct JointEstimate {
    Vector beta_mc;
    Matrix sigma_mc;
    double sigma2 = 1.0;
    CovMethod method = CovMethod::naive;
    std::int64_t n_o = 0;
    std::int64_t n_r = 0;
    std::vector<std::string> warnings;

    double ratio() const noexcept { return static_cast<double>(n_r) / static_cast<double>(n_o); }
};

/// X'y / n for standardized X and y.
inline MarginalSummary marginal_assoc(const CovariateMatrix& x, const Vector& y) {
    if (!x.standardized()) throw InvalidArgument("marginal_assoc requires standardized covariates");
    if (y.size() != x.n()) {
        throw DimensionMismatch("outcome length " + std::to_string(y.size()) +
                                " does not match covariate rows " + std::to_string(x.n()));
    }
    MarginalSummary s;
    s.beta_m = x.values().transpose() * y / static_cast<double>(x.n());
    s.n_o = x.n();
    return s;
}

/// Plug-in joint estimator R_r^{-1} beta_m.
inline Vector joint_from_marginal(const MarginalSummary& summary, const CorrelationEstimate& r_ref,
                                  const SolvePolicy& policy = {}) {
    if (summary.p() != r_ref.p()) {
        throw DimensionMismatch("summary has " + std::to_string(summary.p()) +
                                " coefficients but the panel has " + std::to_string(r_ref.p()));
    }
    return SpdSolver(r_ref.matrix, policy).solve(summary.beta_m);
}

/// (sigma2 / n_o) R^{-1}: the covariance that ignores reference-panel noise.
inline Matrix naive_cov(const CorrelationEstimate& r_ref, double sigma2, std::int64_t n_o,
                        const SolvePolicy& policy = {}) {
    if (n_o < 1) throw InvalidArgument("naive_cov: n_o must be positive");
    return (sigma2 / static_cast<double>(n_o)) * SpdSolver(r_ref.matrix, policy).inverse();
}

enum class Sigma2Policy { estimate, conservative_one };

struct Sigma2Options {
    Sigma2Policy policy = Sigma2Policy::estimate;
    double min_value = 0.05;
};

/// Residual variance of a standardized outcome, 1 - b'Rb, clamped to
/// [min_value, 1].
inline double sigma2_hat(const Vector& beta, const CorrelationEstimate& r,
                         const Sigma2Options& opts = {}) {
    if (opts.policy == Sigma2Policy::conservative_one) return 1.0;
    if (beta.size() != r.p()) throw DimensionMismatch("sigma2_hat: beta and R differ in size");
    const double explained = beta.dot(r.matrix * beta);
    return std::clamp(1.0 - explained, opts.min_value, 1.0);
}

struct ThresholdRule {
    double alpha = 0.05;
    bool bonferroni = false;  // divide alpha by the number of coefficients
};

/// Zeroes coefficients whose naive z statistic sqrt(n_o)/sigma * b_i / sqrt(R_ii)
/// is below the two-sided critical value.
inline Vector threshold_beta(const Vector& beta_mc, const CorrelationEstimate& r_ref, double sigma2,
                             std::int64_t n_o, const ThresholdRule& rule = {}) {
    if (!(rule.alpha > 0.0 && rule.alpha < 1.0)) {
        throw InvalidArgument("threshold alpha must lie in (0,1)");
    }
    if (beta_mc.size() != r_ref.p()) throw DimensionMismatch("threshold_beta: size mismatch");
    if (!(sigma2 > 0.0)) throw InvalidArgument("threshold_beta: sigma2 must be positive");
    const double level = rule.bonferroni ? rule.alpha / static_cast<double>(beta_mc.size()) : rule.alpha;
    const double crit = normal::quantile(1.0 - level / 2.0);
    const double scale = std::sqrt(static_cast<double>(n_o) / sigma2);
    Vector out = beta_mc;
    for (Index i = 0; i < out.size(); ++i) {
        const double t = scale * beta_mc(i) / std::sqrt(r_ref.matrix(i, i));
        if (std::abs(t) < crit) out(i) = 0.0;
    }
    return out;
}

}  // namespace refjoint
