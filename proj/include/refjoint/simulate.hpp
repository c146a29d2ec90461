#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "refjoint/error.hpp"
#include "refjoint/estimator.hpp"
#include "refjoint/inference.hpp"
#include "refjoint/linalg.hpp"
#include "refjoint/normal.hpp"
#include "refjoint/psat.hpp"
#include "refjoint/rng.hpp"
#include "refjoint/varcorrect.hpp"

// Simulation harness: AR(1) Gaussian or genotype-like covariates, phenotypes
// at a target heritability, and per-repetition comparison of the full-data,
// naive and reference-panel corrected analyses, optionally after tag
// selection with the noise re-drawn until the region is selected.
namespace refjoint {

/// Sigma_ij = rho^|i-j|.
inline Matrix ar1_sigma(Index p, double rho) {
    if (p < 1) throw InvalidArgument("ar1_sigma: p must be positive");
    if (!(std::abs(rho) < 1.0)) throw InvalidArgument("ar1_sigma: |rho| must be below 1");
    Matrix s(p, p);
    for (Index j = 0; j < p; ++j)
        for (Index i = 0; i < p; ++i) s(i, j) = std::pow(rho, static_cast<double>(std::abs(i - j)));
    return s;
}

/// n i.i.d. rows from N(0, sigma) as Z L' with sigma = L L'.
inline Matrix sample_gaussian(Index n, const Matrix& sigma, Rng& rng) {
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() != Eigen::Success) throw InvalidArgument("sample_gaussian: sigma is not positive definite");
    Matrix z(n, sigma.rows());
    for (Index j = 0; j < z.cols(); ++j)
        for (Index i = 0; i < n; ++i) z(i, j) = rng.normal();
    return z * llt.matrixL().transpose();
}

/// Minor allele frequency: Beta(1,2)/2 floored at 0.05. Beta(1,2) has CDF
/// 1 - (1-x)^2, so it is drawn by inversion.
inline double maf_sample(Rng& rng) {
    const double beta12 = 1.0 - std::sqrt(1.0 - rng.uniform());
    return std::max(0.5 * beta12, 0.05);
}

struct GenotypeCutpoints {
    double lower;  // Z_{1 - 2q/3}
    double upper;  // Z_{1 - q/3}
};

inline GenotypeCutpoints genotype_cutpoints(double q) {
    if (!(q > 0.0 && q <= 0.5)) throw InvalidArgument("minor allele frequency must lie in (0, 0.5]");
    return {normal::quantile(1.0 - 2.0 * q / 3.0), normal::quantile(1.0 - q / 3.0)};
}

inline int genotype_transform(double w, const GenotypeCutpoints& cut) {
    if (w <= cut.lower) return 0;
    if (w < cut.upper) return 1;
    return 2;
}

inline int genotype_transform(double w, double q) { return genotype_transform(w, genotype_cutpoints(q)); }

/// y = X beta + eps with Var(eps) chosen so the realized b'R_hat b makes up a
/// fraction h of the total; y is returned standardized. Holds X beta so the
/// noise can be re-drawn cheaply.
class PhenotypeModel {
public:
    PhenotypeModel(const CovariateMatrix& x, const Vector& beta, double h) {
        if (!x.standardized()) throw InvalidArgument("phenotype requires standardized covariates");
        if (beta.size() != x.p()) throw DimensionMismatch("phenotype: beta has the wrong length");
        if (!(h > 0.0 && h < 1.0)) throw InvalidArgument("heritability must lie in (0,1)");
        signal_ = x.values() * beta;
        const double explained = signal_.squaredNorm() / static_cast<double>(x.n());
        if (beta.isZero(0.0)) {
            noise_sd_ = 1.0;
        } else {
            if (!(explained > 0.0)) throw ZeroSignal("b'Rb is zero but a positive heritability was requested");
            noise_sd_ = std::sqrt(explained * (1.0 - h) / h);
        }
    }

    Vector draw(Rng& rng) const {
        Vector y(signal_.size());
        for (Index i = 0; i < y.size(); ++i) y(i) = signal_(i) + noise_sd_ * rng.normal();
        const double n = static_cast<double>(y.size());
        y.array() -= y.sum() / n;
        y /= std::sqrt(y.squaredNorm() / n);
        return y;
    }

    double noise_sd() const noexcept { return noise_sd_; }

private:
    Vector signal_;
    double noise_sd_ = 1.0;
};

inline Vector phenotype(const CovariateMatrix& x, const Vector& beta, double h, Rng& rng) {
    return PhenotypeModel(x, beta, h).draw(rng);
}

enum class CovariateKind { gaussian, genotype };
enum class SimMethod { full, naive, vc_gaussian, vc_empirical, vc_mle };

inline std::string_view to_string(SimMethod m) {
    switch (m) {
        case SimMethod::full: return "full";
        case SimMethod::naive: return "naive";
        case SimMethod::vc_gaussian: return "vc_gaussian";
        case SimMethod::vc_empirical: return "vc_empirical";
        case SimMethod::vc_mle: return "vc_mle";
    }
    return "unknown";
}

struct SelectionRule {
    enum class Kind { none, z_level, raw };
    Kind kind = Kind::none;
    double alpha_sel = 0.05;
    double n_tests = 20000;
    double raw = 0.0;  // |beta_m_tag| must exceed this (Kind::raw)

    /// Bound on |beta_m_tag| for a study of n_o observations (sigma_hat = 1).
    double marginal_bound(std::int64_t n_o) const {
        switch (kind) {
            case Kind::none: return 0.0;
            case Kind::z_level:
                return normal::quantile(1.0 - alpha_sel / (2.0 * n_tests)) / std::sqrt(static_cast<double>(n_o));
            case Kind::raw: return raw;
        }
        return 0.0;
    }
};

enum class SelectionAdjust { psat, none, both };

struct ScenarioConfig {
    std::string name = "scenario";
    Index p = 20;
    double rho = 0.8;
    std::int64_t n_o = 10000;
    std::int64_t n_r = 500;
    double h = 0.05;
    std::vector<Index> causal{0, 19};  // 0-based
    double beta_value = 1.0;
    CovariateKind covariate_kind = CovariateKind::gaussian;
    std::optional<Index> tag_index;  // 0-based
    SelectionRule threshold_rule;
    SelectionAdjust adjust = SelectionAdjust::psat;
    std::vector<SimMethod> methods{SimMethod::full, SimMethod::naive, SimMethod::vc_gaussian,
                                   SimMethod::vc_empirical};
    int reps = 1000;
    std::uint64_t seed = 1;
    double alpha = 0.05;
    bool threshold_beta = true;
    ThresholdRule beta_threshold;  // alpha defaults to the analysis level
    Sigma2Options sigma2;
    unsigned threads = 1;
    std::int64_t max_resamples = 100000;

    bool selection_active() const { return tag_index.has_value() && threshold_rule.kind != SelectionRule::Kind::none; }
};

inline void validate(const ScenarioConfig& c) {
    if (c.p < 1) throw InvalidArgument("p must be positive");
    if (!(std::abs(c.rho) < 1.0)) throw InvalidArgument("rho must lie in (-1,1)");
    if (c.n_o < 2 || c.n_r < 2) throw InvalidArgument("n_o and n_r must be at least 2");
    if (!(c.h > 0.0 && c.h < 1.0)) throw InvalidArgument("h must lie in (0,1)");
    for (Index i : c.causal)
        if (i < 0 || i >= c.p) throw InvalidArgument("causal index out of range");
    if (c.reps < 1) throw InvalidArgument("reps must be at least 1");
    if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw InvalidArgument("alpha must lie in (0,1)");
    if (c.methods.empty()) throw InvalidArgument("no methods configured");
    if (c.tag_index && (*c.tag_index < 0 || *c.tag_index >= c.p)) throw InvalidArgument("tag index out of range");
    const bool wants_mle = std::find(c.methods.begin(), c.methods.end(), SimMethod::vc_mle) != c.methods.end();
    if (wants_mle && !c.selection_active()) throw InvalidArgument("vc_mle requires an active tag selection");
}

/// One analysis arm: a method with or without selection adjustment.
struct ArmOutcome {
    SimMethod method = SimMethod::naive;
    bool adjusted = false;
    TestReport report;
    ErrorProportions error;

    std::string label() const {
        std::string s(to_string(method));
        return adjusted ? s : s + "_unadj";
    }
};

struct RepOutcome {
    bool failed = false;          // selection never happened within the resample cap
    std::int64_t draws = 0;       // phenotype draws used (1 without selection)
    std::vector<ArmOutcome> arms;
};

namespace detail {

struct CovariateDraw {
    CovariateMatrix xo, xr;
};

inline CovariateDraw draw_covariates(const ScenarioConfig& cfg, const Matrix& sigma, Rng& rng) {
    const Index n = static_cast<Index>(cfg.n_o + cfg.n_r);
    for (int attempt = 0; attempt < 100; ++attempt) {
        Matrix w = sample_gaussian(n, sigma, rng);
        if (cfg.covariate_kind == CovariateKind::genotype) {
            for (Index j = 0; j < w.cols(); ++j) {
                const GenotypeCutpoints cut = genotype_cutpoints(maf_sample(rng));
                for (Index i = 0; i < n; ++i) w(i, j) = genotype_transform(w(i, j), cut);
            }
        }
        try {
            return {standardize(w.topRows(static_cast<Index>(cfg.n_o))),
                    standardize(w.bottomRows(static_cast<Index>(cfg.n_r)))};
        } catch (const ConstantColumn&) {
            // monomorphic genotype column; draw again
        }
    }
    throw ConstantColumn("could not draw non-constant covariates in 100 attempts");
}

}  // namespace detail

/// One repetition of a scenario. The RNG stream is derived from (seed, rep)
/// alone, so any repetition can be recomputed in isolation.
inline RepOutcome simulate_rep(const ScenarioConfig& cfg, int rep) {
    Rng rng(cfg.seed, static_cast<std::uint64_t>(rep));
    const Matrix sigma = ar1_sigma(cfg.p, cfg.rho);
    const auto draw = detail::draw_covariates(cfg, sigma, rng);
    const CorrelationEstimate r_o = correlation(draw.xo, PanelSource::original);
    const CorrelationEstimate r_r = correlation(draw.xr, PanelSource::reference);

    Vector beta = Vector::Zero(cfg.p);
    for (Index i : cfg.causal) beta(i) = cfg.beta_value;
    const PhenotypeModel model(draw.xo, beta, cfg.h);

    RepOutcome out;
    const bool selecting = cfg.selection_active();
    const double no = static_cast<double>(cfg.n_o);
    Vector y = model.draw(rng);
    out.draws = 1;
    std::optional<SelectionEvent> event;
    if (selecting) {
        const Index tag = *cfg.tag_index;
        const double bound = cfg.threshold_rule.marginal_bound(cfg.n_o);
        event = SelectionEvent::tag(tag, bound * bound);
        auto tag_marginal = [&](const Vector& yy) { return draw.xo.values().col(tag).dot(yy) / no; };
        while (!(std::abs(tag_marginal(y)) > bound)) {
            if (out.draws >= cfg.max_resamples) {
                out.failed = true;
                return out;
            }
            y = model.draw(rng);
            ++out.draws;
        }
    }
    const MarginalSummary summary = marginal_assoc(draw.xo, y);

    const SpdSolver solve_o(r_o.matrix), solve_r(r_r.matrix);
    const Vector beta_full = solve_o.solve(summary.beta_m);
    const Vector beta_mc = solve_r.solve(summary.beta_m);
    const Matrix rinv_o = solve_o.inverse(), rinv_r = solve_r.inverse();
    const double s2_full = sigma2_hat(beta_full, r_o, cfg.sigma2);
    const double s2_mc = sigma2_hat(beta_mc, r_r, cfg.sigma2);
    const Matrix naive = (s2_mc / no) * rinv_r;

    std::optional<VR> vr_gauss, vr_emp;
    auto corrected = [&](const Vector& b, double s2, bool gaussian) -> Matrix {
        const Vector used = cfg.threshold_beta ? threshold_beta(b, r_r, s2, cfg.n_o, cfg.beta_threshold) : b;
        if (used.isZero(0.0)) return (s2 / no) * rinv_r;
        std::optional<VR>& slot = gaussian ? vr_gauss : vr_emp;
        if (!slot) {
            const VSigma vs = gaussian ? vsigma_gaussian(r_r.matrix) : vsigma_empirical(draw.xr);
            slot = vr_from_vsigma(vs, r_r);
        }
        return sigma_mc(used, r_r, *slot, s2, cfg.n_o, cfg.n_r);
    };

    std::vector<bool> adjust_modes;
    if (!selecting || cfg.adjust == SelectionAdjust::none) adjust_modes = {false};
    else if (cfg.adjust == SelectionAdjust::psat) adjust_modes = {true};
    else adjust_modes = {true, false};

    const std::vector<Index> causal(cfg.causal.begin(), cfg.causal.end());
    for (SimMethod m : cfg.methods) {
        const Vector* b = &beta_mc;
        const CorrelationEstimate* r_sel = &r_r;
        Matrix cov;
        switch (m) {
            case SimMethod::full:
                b = &beta_full;
                r_sel = &r_o;
                cov = (s2_full / no) * rinv_o;
                break;
            case SimMethod::naive: cov = naive; break;
            case SimMethod::vc_gaussian: cov = corrected(beta_mc, s2_mc, true); break;
            case SimMethod::vc_empirical: cov = corrected(beta_mc, s2_mc, false); break;
            case SimMethod::vc_mle: {
                const ConditionalEstimate mle = conditional_mle(beta_mc, naive, r_r, *event);
                cov = corrected(mle.beta_tilde, sigma2_hat(mle.beta_tilde, r_r, cfg.sigma2), false);
                break;
            }
        }
        for (bool adj : adjust_modes) {
            ArmOutcome arm;
            arm.method = m;
            arm.adjusted = adj || !selecting;
            const CovMethod cm = m == SimMethod::naive || m == SimMethod::full ? CovMethod::naive
                                 : m == SimMethod::vc_gaussian               ? CovMethod::var_corrected_gaussian
                                 : m == SimMethod::vc_empirical              ? CovMethod::var_corrected_empirical
                                                                             : CovMethod::var_corrected_mle;
            arm.report = adj ? conditional_tests(*b, cov, *r_sel, *event, cfg.alpha, cm)
                             : wald_tests(*b, cov, cfg.alpha, cm);
            arm.error = fdp_tpp(arm.report.rejected_indices(), causal);
            out.arms.push_back(std::move(arm));
        }
    }
    return out;
}

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

struct MethodSummary {
    std::string label;
    MeanSe fdr;                 // conditional on selection when selection is active
    MeanSe power;               // conditional power when selection is active
    MeanSe unconditional_power; // unselected draws count as zero detections
};

struct ScenarioResult {
    std::string name;
    int reps = 0;
    int failed_reps = 0;
    std::int64_t total_draws = 0;
    double selection_rate = 1.0;  // selected draws / all draws
    std::vector<MethodSummary> methods;
    std::vector<RepOutcome> outcomes;  // indexed by repetition; kept only on request
};

namespace detail {

inline MeanSe mean_se(double sum, double sum_sq, double count) {
    if (count <= 0.0) return {};
    const double mean = sum / count;
    const double var = count > 1.0 ? std::max(0.0, (sum_sq - count * mean * mean) / (count - 1.0)) : 0.0;
    return {mean, std::sqrt(var / count)};
}

}  // namespace detail

/// Runs every repetition (in parallel when cfg.threads > 1) and reduces the
/// per-repetition outcomes in repetition order; results do not depend on the
/// thread count.
inline ScenarioResult run_scenario(const ScenarioConfig& cfg, bool keep_outcomes = false) {
    validate(cfg);
    std::vector<RepOutcome> outcomes(static_cast<std::size_t>(cfg.reps));
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::atomic<bool> failed{false};
    auto worker = [&] {
        for (int r = next++; r < cfg.reps && !failed; r = next++) {
            try {
                outcomes[static_cast<std::size_t>(r)] = simulate_rep(cfg, r);
            } catch (...) {
                if (!failed.exchange(true)) failure = std::current_exception();
            }
        }
    };
    const unsigned threads = cfg.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : cfg.threads;
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);

    ScenarioResult res;
    res.name = cfg.name;
    res.reps = cfg.reps;
    std::int64_t selected = 0;
    for (const auto& o : outcomes) {
        res.total_draws += o.draws;
        if (o.failed) ++res.failed_reps;
        else ++selected;
    }
    if (cfg.selection_active() && res.failed_reps > 0.05 * cfg.reps) {
        throw SelectionNeverOccurred(std::to_string(res.failed_reps) + " of " + std::to_string(cfg.reps) +
                                     " repetitions hit the resample cap of " +
                                     std::to_string(cfg.max_resamples));
    }
    res.selection_rate = res.total_draws > 0 ? static_cast<double>(selected) / static_cast<double>(res.total_draws) : 0.0;

    std::size_t n_arms = 0;
    for (const auto& o : outcomes)
        if (!o.failed) {
            n_arms = o.arms.size();
            break;
        }
    for (std::size_t a = 0; a < n_arms; ++a) {
        double fdp = 0, fdp2 = 0, tpp = 0, tpp2 = 0;
        double used = 0;
        std::string label;
        for (const auto& o : outcomes) {
            if (o.failed) continue;
            const auto& arm = o.arms[a];
            label = arm.label();
            fdp += arm.error.fdp;
            fdp2 += arm.error.fdp * arm.error.fdp;
            tpp += arm.error.tpp;
            tpp2 += arm.error.tpp * arm.error.tpp;
            used += 1.0;
        }
        MethodSummary ms;
        ms.label = label;
        ms.fdr = detail::mean_se(fdp, fdp2, used);
        ms.power = detail::mean_se(tpp, tpp2, used);
        ms.unconditional_power = cfg.selection_active()
                                     ? detail::mean_se(tpp, tpp2, static_cast<double>(res.total_draws))
                                     : ms.power;
        res.methods.push_back(std::move(ms));
    }
    if (keep_outcomes) res.outcomes = std::move(outcomes);
    return res;
}

}  // namespace refjoint
