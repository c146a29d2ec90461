#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "refjoint/error.hpp"
#include "refjoint/estimator.hpp"
#include "refjoint/normal.hpp"

namespace refjoint {

struct BhResult {
    std::vector<double> adjusted;
    std::vector<bool> rejected;

    std::vector<Index> rejected_indices() const {
        std::vector<Index> out;
        for (std::size_t i = 0; i < rejected.size(); ++i)
            if (rejected[i]) out.push_back(static_cast<Index>(i));
        return out;
    }
};

/// Benjamini-Hochberg step-up: adjusted_(k) = min_{j >= k} p_(j) m / j,
/// capped at 1; rejected iff adjusted <= q.
inline BhResult bh_adjust(const std::vector<double>& pvalues, double q) {
    if (!(q > 0.0 && q < 1.0)) throw InvalidArgument("BH level must lie in (0,1)");
    const std::size_t m = pvalues.size();
    for (double p : pvalues) {
        if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("p-values must lie in [0,1]");
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return pvalues[a] < pvalues[b]; });

    BhResult out{std::vector<double>(m, 1.0), std::vector<bool>(m, false)};
    double running = 1.0;
    for (std::size_t k = m; k-- > 0;) {
        const std::size_t idx = order[k];
        running = std::min(running, pvalues[idx] * static_cast<double>(m) / static_cast<double>(k + 1));
        out.adjusted[idx] = running;
    }
    for (std::size_t i = 0; i < m; ++i) out.rejected[i] = out.adjusted[i] <= q;
    return out;
}

enum class TestKind { wald, conditional };

inline std::string_view to_string(TestKind k) { return k == TestKind::wald ? "wald" : "conditional"; }

struct TestReport {
    std::vector<std::string> ids;
    Vector beta;
    Vector se;
    Vector z;
    std::vector<double> pvalue;
    std::vector<double> p_adjusted;
    std::vector<bool> rejected;
    CovMethod method = CovMethod::naive;
    TestKind kind = TestKind::wald;
    double alpha = 0.05;

    std::vector<Index> rejected_indices() const {
        std::vector<Index> out;
        for (std::size_t i = 0; i < rejected.size(); ++i)
            if (rejected[i]) out.push_back(static_cast<Index>(i));
        return out;
    }
};

inline std::vector<std::string> default_ids(Index p) {
    std::vector<std::string> ids;
    ids.reserve(static_cast<std::size_t>(p));
    for (Index i = 0; i < p; ++i) ids.push_back("x" + std::to_string(i + 1));
    return ids;
}

inline Vector standard_errors(const Matrix& cov) {
    Vector se(cov.rows());
    for (Index i = 0; i < cov.rows(); ++i) {
        if (!(cov(i, i) > 0.0)) {
            throw NonPositiveVariance("coefficient " + std::to_string(i + 1) +
                                      " has non-positive variance " + std::to_string(cov(i, i)));
        }
        se(i) = std::sqrt(cov(i, i));
    }
    return se;
}

/// Two-sided Wald tests z_i = b_i / sqrt(Sigma_ii), BH-adjusted at alpha.
inline TestReport wald_tests(const Vector& beta, const Matrix& cov, double alpha,
                             CovMethod method = CovMethod::naive,
                             std::vector<std::string> ids = {}) {
    if (cov.rows() != beta.size() || cov.cols() != beta.size()) {
        throw DimensionMismatch("wald_tests: covariance does not match coefficients");
    }
    TestReport rep;
    rep.ids = ids.empty() ? default_ids(beta.size()) : std::move(ids);
    rep.beta = beta;
    rep.se = standard_errors(cov);
    rep.z = beta.cwiseQuotient(rep.se);
    rep.pvalue.resize(static_cast<std::size_t>(beta.size()));
    for (Index i = 0; i < beta.size(); ++i) rep.pvalue[static_cast<std::size_t>(i)] = normal::two_sided_p(rep.z(i));
    auto bh = bh_adjust(rep.pvalue, alpha);
    rep.p_adjusted = std::move(bh.adjusted);
    rep.rejected = std::move(bh.rejected);
    rep.method = method;
    rep.kind = TestKind::wald;
    rep.alpha = alpha;
    return rep;
}

inline TestReport wald_tests(const JointEstimate& est, double alpha = 0.05,
                             std::vector<std::string> ids = {}) {
    return wald_tests(est.beta_mc, est.sigma_mc, alpha, est.method, std::move(ids));
}

struct ErrorProportions {
    double fdp = 0.0;
    double tpp = 0.0;
};

/// FDP = |s \ s*| / |s| (0 when nothing is rejected), TPP = |s & s*| / |s*|.
inline ErrorProportions fdp_tpp(const std::vector<Index>& rejected, const std::vector<Index>& causal) {
    const std::set<Index> truth(causal.begin(), causal.end());
    const std::set<Index> found(rejected.begin(), rejected.end());
    std::size_t hits = 0;
    for (Index i : found) hits += truth.count(i);
    ErrorProportions out;
    if (!found.empty()) {
        out.fdp = static_cast<double>(found.size() - hits) / static_cast<double>(found.size());
    }
    if (!truth.empty()) out.tpp = static_cast<double>(hits) / static_cast<double>(truth.size());
    return out;
}

}  // namespace refjoint
