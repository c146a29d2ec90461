#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "refjoint/error.hpp"
#include "refjoint/estimator.hpp"
#include "refjoint/inference.hpp"
#include "refjoint/linalg.hpp"
#include "refjoint/normal.hpp"
#include "refjoint/varcorrect.hpp"

// Inference after a region was selected by an aggregate test on the same
// data. Selection is either quadratic on the tag covariate,
//     S = b' R e* e*' R b = (e*' R b)^2 > t,
// or linear, S = a' b > t. Both reduce to a single direction v with
// S = (v'b)^2 or v'b, which is what every routine below works with.
namespace refjoint {

enum class SelectionKind { quadratic_tag, linear };

struct SelectionEvent {
    SelectionKind kind = SelectionKind::quadratic_tag;
    std::optional<Index> tag_index;  // 0-based
    std::optional<Vector> contrast;
    double threshold = 0.0;

    static SelectionEvent tag(Index index, double t) {
        SelectionEvent e;
        e.kind = SelectionKind::quadratic_tag;
        e.tag_index = index;
        e.threshold = t;
        return e;
    }
    static SelectionEvent linear(Vector a, double t) {
        SelectionEvent e;
        e.kind = SelectionKind::linear;
        e.contrast = std::move(a);
        e.threshold = t;
        return e;
    }
};

inline void validate(const SelectionEvent& e, Index p) {
    if (!std::isfinite(e.threshold)) throw InvalidArgument("selection threshold must be finite");
    if (e.kind == SelectionKind::quadratic_tag) {
        if (!e.tag_index || e.contrast) throw InvalidArgument("tag selection needs exactly a tag index");
        if (*e.tag_index < 0 || *e.tag_index >= p) throw InvalidArgument("tag index out of range");
        if (e.threshold < 0.0) throw InvalidArgument("quadratic selection threshold must be >= 0");
    } else {
        if (!e.contrast || e.tag_index) throw InvalidArgument("linear selection needs exactly a contrast");
        if (e.contrast->size() != p) throw DimensionMismatch("selection contrast has the wrong length");
    }
}

/// v such that S = (v'b)^2 (tag: v = R e*) or S = v'b (linear: v = a).
inline Vector selection_direction(const SelectionEvent& e, const CorrelationEstimate& r_ref) {
    validate(e, r_ref.p());
    if (e.kind == SelectionKind::quadratic_tag) return r_ref.matrix.col(*e.tag_index);
    return *e.contrast;
}

inline double selection_stat(const Vector& beta_mc, const CorrelationEstimate& r_ref,
                             const SelectionEvent& e) {
    const double proj = selection_direction(e, r_ref).dot(beta_mc);
    return e.kind == SelectionKind::quadratic_tag ? proj * proj : proj;
}

inline bool is_selected(double statistic, const SelectionEvent& e) { return statistic > e.threshold; }

struct Decomposition {
    double u = 0.0;  // eta' b
    Vector w;        // b - c u, independent of u under N(beta, Sigma)
    Vector c;        // Sigma eta / (eta' Sigma eta)
};

inline Decomposition decompose(const Vector& beta, const Matrix& sigma, const Vector& eta) {
    if (sigma.rows() != beta.size() || eta.size() != beta.size()) {
        throw DimensionMismatch("decompose: sizes disagree");
    }
    const Vector sigma_eta = sigma * eta;
    const double var = eta.dot(sigma_eta);
    if (!(var > 0.0)) throw DegenerateDirection("eta' Sigma eta = " + std::to_string(var));
    Decomposition d;
    d.c = sigma_eta / var;
    d.u = eta.dot(beta);
    d.w = beta - d.c * d.u;
    return d;
}

struct Interval {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
};

/// Sorted union of disjoint open intervals.
struct TruncationRegion {
    std::vector<Interval> intervals;

    static TruncationRegion full() { return {{Interval{}}}; }
    static TruncationRegion none() { return {}; }

    bool empty() const noexcept { return intervals.empty(); }
    bool contains(double u) const noexcept {
        for (const auto& iv : intervals)
            if (u > iv.lo && u < iv.hi) return true;
        return false;
    }
    bool is_full() const noexcept {
        return intervals.size() == 1 && std::isinf(intervals[0].lo) && std::isinf(intervals[0].hi);
    }
};

/// Values of u = eta'b for which b = w + c u still passes the selection.
/// Quadratic: {u : (a + b u)^2 > t} with a = v'w, b = v'c; linear: {u : a + b u > t}.
inline TruncationRegion truncation_region(const Vector& w, const Vector& c, const CorrelationEstimate& r_ref,
                                          const SelectionEvent& e, std::optional<double> u_obs = std::nullopt) {
    const Vector v = selection_direction(e, r_ref);
    if (w.size() != v.size() || c.size() != v.size()) throw DimensionMismatch("truncation_region: sizes");
    const double a = v.dot(w);
    const double b = v.dot(c);
    const double inf = std::numeric_limits<double>::infinity();
    const double t = e.threshold;

    TruncationRegion region;
    if (e.kind == SelectionKind::quadratic_tag) {
        if (b == 0.0) {
            region = a * a > t ? TruncationRegion::full() : TruncationRegion::none();
        } else {
            const double root_t = std::sqrt(t);
            const double r1 = (-root_t - a) / b;
            const double r2 = (root_t - a) / b;
            region.intervals = {Interval{-inf, std::min(r1, r2)}, Interval{std::max(r1, r2), inf}};
        }
    } else {
        if (b == 0.0) {
            region = a > t ? TruncationRegion::full() : TruncationRegion::none();
        } else if (b > 0.0) {
            region.intervals = {Interval{(t - a) / b, inf}};
        } else {
            region.intervals = {Interval{-inf, (t - a) / b}};
        }
    }
    if (u_obs && !region.contains(*u_obs)) {
        throw EmptyRegion("observed value " + std::to_string(*u_obs) +
                          " lies outside the truncation region; the selection event does not hold");
    }
    return region;
}

/// Two-sided p-value 2 min(F, 1 - F) of u_obs under N(mu0, var) restricted to
/// the region. Masses are combined on the log scale, so truncation points far
/// in the tails stay finite.
inline double tn_pvalue(double u_obs, double mu0, double var, const TruncationRegion& region) {
    if (!(var > 0.0)) throw InvalidArgument("tn_pvalue: variance must be positive");
    const double sd = std::sqrt(var);
    const double z = (u_obs - mu0) / sd;
    double log_below = -std::numeric_limits<double>::infinity();
    double log_above = log_below;
    for (const auto& iv : region.intervals) {
        const double lo = (iv.lo - mu0) / sd;
        const double hi = (iv.hi - mu0) / sd;
        log_below = normal::log_add(log_below, normal::log_interval_mass(lo, std::min(hi, z)));
        log_above = normal::log_add(log_above, normal::log_interval_mass(std::max(lo, z), hi));
    }
    if (std::isinf(log_below) && std::isinf(log_above)) {
        throw NumericalUnderflow("truncated normal has no mass on either side of " + std::to_string(u_obs));
    }
    const double total = normal::log_add(log_below, log_above);
    const double lower = std::exp(log_below - total);
    const double upper = std::exp(log_above - total);
    return std::min(1.0, 2.0 * std::min(lower, upper));
}

struct SelectionLogProb {
    double log_prob = 0.0;
    double dlog_dm = 0.0;  // derivative with respect to m = v'beta
};

/// log P(S > t) for b ~ N(beta, Sigma) as a function of m = v'beta and
/// s^2 = v' Sigma v.
inline SelectionLogProb selection_log_prob(double m, double s, const SelectionEvent& e) {
    if (!(s > 0.0)) throw DegenerateDirection("selection statistic has zero variance");
    SelectionLogProb out;
    if (e.kind == SelectionKind::quadratic_tag) {
        const double root_t = std::sqrt(e.threshold);
        const double lo = (-root_t - m) / s;  // P(v'b < -sqrt t) = Phi(lo)
        const double hi = (m - root_t) / s;   // P(v'b >  sqrt t) = Phi(hi)
        out.log_prob = normal::log_add(normal::log_cdf(lo), normal::log_cdf(hi));
        out.dlog_dm = (std::exp(normal::log_pdf(hi) - out.log_prob) -
                       std::exp(normal::log_pdf(lo) - out.log_prob)) / s;
    } else {
        const double hi = (m - e.threshold) / s;
        out.log_prob = normal::log_cdf(hi);
        out.dlog_dm = std::exp(normal::log_pdf(hi) - out.log_prob) / s;
    }
    return out;
}

/// P(S > t) in closed form for the rank-1 quadratic or linear event.
inline double selection_prob(const Vector& beta, const Matrix& sigma, const CorrelationEstimate& r_ref,
                             const SelectionEvent& e) {
    const Vector v = selection_direction(e, r_ref);
    const double s = std::sqrt(v.dot(sigma * v));
    return std::exp(selection_log_prob(v.dot(beta), s, e).log_prob);
}

struct MleOptions {
    double gradient_tolerance = 1e-8;  // on sqrt(g' Sigma g), the whitened gradient norm
    int max_iterations = 500;
};

struct ConditionalEstimate {
    Vector beta_tilde;
    bool converged = false;
    double neg_log_lik = 0.0;
    int iterations = 0;
};

/// Maximizes -1/2 (b - beta)' Sigma^{-1} (b - beta) - log P(S > t | beta) by
/// BFGS from the observed b. The inverse-Hessian seed is Sigma itself, which
/// is exact for the Gaussian part, so most problems finish in a few steps.
inline ConditionalEstimate conditional_mle(const Vector& beta_mc, const Matrix& sigma_naive,
                                           const CorrelationEstimate& r_ref, const SelectionEvent& e,
                                           const MleOptions& opts = {}) {
    const Index p = beta_mc.size();
    if (sigma_naive.rows() != p || sigma_naive.cols() != p) throw DimensionMismatch("conditional_mle: sizes");
    const Vector v = selection_direction(e, r_ref);
    const double s = std::sqrt(v.dot(sigma_naive * v));
    const SpdSolver precision(sigma_naive);

    auto objective = [&](const Vector& beta, Vector& grad) {
        const Vector d = beta - beta_mc;
        const Vector pd = precision.solve(d);
        const auto sel = selection_log_prob(v.dot(beta), s, e);
        grad = pd + sel.dlog_dm * v;
        return 0.5 * d.dot(pd) + sel.log_prob;
    };
    auto whitened_norm = [&](const Vector& g) { return std::sqrt(std::max(0.0, g.dot(sigma_naive * g))); };

    ConditionalEstimate out;
    Vector x = beta_mc, g(p);
    double f = objective(x, g);
    Matrix h = sigma_naive;

    for (int it = 0; it < opts.max_iterations; ++it) {
        if (whitened_norm(g) <= opts.gradient_tolerance) {
            out.converged = true;
            break;
        }
        Vector dir = -(h * g);
        double slope = g.dot(dir);
        if (!(slope < 0.0)) {  // lost descent; restart from the exact Gaussian curvature
            h = sigma_naive;
            dir = -(h * g);
            slope = g.dot(dir);
        }
        double step = 1.0;
        Vector x_new(p), g_new(p);
        double f_new = 0.0;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            x_new = x + step * dir;
            f_new = objective(x_new, g_new);
            if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        out.iterations = it + 1;
        if (!accepted) break;
        const Vector sk = x_new - x;
        const Vector yk = g_new - g;
        const double sy = sk.dot(yk);
        if (sy > 1e-300) {
            const double rho = 1.0 / sy;
            const Vector hy = h * yk;
            h += (rho * rho * yk.dot(hy) + rho) * (sk * sk.transpose()) -
                 rho * (hy * sk.transpose() + sk * hy.transpose());
        }
        x = x_new;
        g = g_new;
        f = f_new;
    }
    if (!out.converged && whitened_norm(g) <= opts.gradient_tolerance) out.converged = true;
    out.beta_tilde = x;
    out.neg_log_lik = f;
    return out;
}

/// Per-coefficient conditional tests: for eta = e_i, condition on W and
/// evaluate the truncated normal with variance Sigma_ii under beta_i = 0.
/// `r_sel` is the correlation matrix through which the selection acts on b.
inline TestReport conditional_tests(const Vector& beta, const Matrix& sigma, const CorrelationEstimate& r_sel,
                                    const SelectionEvent& e, double alpha, CovMethod method,
                                    std::vector<std::string> ids = {}) {
    const Index p = beta.size();
    TestReport rep;
    rep.ids = ids.empty() ? default_ids(p) : std::move(ids);
    rep.beta = beta;
    rep.se = standard_errors(sigma);
    rep.z = beta.cwiseQuotient(rep.se);
    rep.pvalue.resize(static_cast<std::size_t>(p));
    for (Index i = 0; i < p; ++i) {
        const Vector eta = Vector::Unit(p, i);
        const Decomposition d = decompose(beta, sigma, eta);
        const TruncationRegion region = truncation_region(d.w, d.c, r_sel, e, d.u);
        rep.pvalue[static_cast<std::size_t>(i)] = tn_pvalue(d.u, 0.0, sigma(i, i), region);
    }
    auto bh = bh_adjust(rep.pvalue, alpha);
    rep.p_adjusted = std::move(bh.adjusted);
    rep.rejected = std::move(bh.rejected);
    rep.method = method;
    rep.kind = TestKind::conditional;
    rep.alpha = alpha;
    return rep;
}

struct PsatOptions {
    CovMethod method = CovMethod::var_corrected_mle;
    FitOptions fit;  // fit.method is overridden by `method`
    MleOptions mle;
};

struct PsatResult {
    bool selected = false;
    double statistic = 0.0;
    double threshold = 0.0;
    Vector beta_mc;
    std::optional<ConditionalEstimate> mle;
    std::optional<JointFit> fit;
    std::optional<TestReport> conditional;  // selection-adjusted p-values
    std::optional<TestReport> unadjusted;   // Wald p-values with the same covariance
    std::vector<std::string> warnings;
};

/// Full post-selection analysis of one region from summary data:
///  1. b = R_r^{-1} beta_m; stop (not selected) unless S(b) > t.
///  2. Conditional MLE under the naive covariance with sigma2 from b.
///  3. sigma2 and the (thresholded) coefficients for the correction come from
///     the MLE (vc_mle) or from b (naive / vc_gaussian / vc_empirical).
///  4. Conditional p-values with the resulting Sigma_mc, then BH at alpha.
inline PsatResult psat_pipeline(const MarginalSummary& summary, const CovariateMatrix& panel,
                                const SelectionEvent& event, double alpha, const PsatOptions& opts = {}) {
    validate(summary);
    if (!panel.standardized()) throw InvalidArgument("reference panel must be standardized");
    if (panel.p() != summary.p()) throw DimensionMismatch("summary and panel differ in covariate count");
    validate(event, summary.p());

    PsatResult res;
    res.threshold = event.threshold;
    const CorrelationEstimate r_ref = correlation(panel);
    const SpdSolver solver(r_ref.matrix, opts.fit.solve);
    if (solver.warning()) res.warnings.push_back(solver.warning()->message());
    res.beta_mc = solver.solve(summary.beta_m);
    res.statistic = selection_stat(res.beta_mc, r_ref, event);
    res.selected = is_selected(res.statistic, event);
    if (!res.selected) return res;

    FitOptions fo = opts.fit;
    fo.method = opts.method == CovMethod::var_corrected_mle ? CovMethod::var_corrected_empirical : opts.method;

    if (opts.method == CovMethod::var_corrected_mle) {
        const double sigma2_0 = sigma2_hat(res.beta_mc, r_ref, fo.sigma2);
        const Matrix naive0 = (sigma2_0 / static_cast<double>(summary.n_o)) * solver.inverse();
        res.mle = conditional_mle(res.beta_mc, naive0, r_ref, event, opts.mle);
        if (!res.mle->converged) {
            res.warnings.push_back("NotConverged: conditional MLE stopped after " +
                                   std::to_string(res.mle->iterations) + " iterations");
        }
        res.fit = fit_joint(summary, panel, fo, &res.mle->beta_tilde);
    } else {
        res.fit = fit_joint(summary, panel, fo);
    }
    res.fit->estimate.method = opts.method;
    for (const auto& w : res.fit->estimate.warnings) res.warnings.push_back(w);

    const Matrix& sigma = res.fit->estimate.sigma_mc;
    res.conditional = conditional_tests(res.beta_mc, sigma, r_ref, event, alpha, opts.method, summary.ids);
    res.unadjusted = wald_tests(res.beta_mc, sigma, alpha, opts.method, summary.ids);
    return res;
}

}  // namespace refjoint
