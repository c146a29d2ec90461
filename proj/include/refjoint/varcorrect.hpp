#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "refjoint/error.hpp"
#include "refjoint/estimator.hpp"
#include "refjoint/linalg.hpp"

// Variance of the vectorized sample covariance (V_Sigma), its delta-method
// image on the correlation scale (V_R), and the reference-panel corrected
// covariance of the plug-in joint estimator.
//
// Both V_Sigma estimators describe one observation, i.e. the asymptotic
// variance of sqrt(n) vec(Sigma_hat). They are accumulated on the p(p+1)/2
// distinct coordinates and expanded to the full p^2 x p^2 layout at the end.
namespace refjoint {

enum class VSigmaMethod { gaussian, empirical };

struct VSigma {
    Matrix matrix;  // p^2 x p^2, column-major vec ordering
    VSigmaMethod method = VSigmaMethod::empirical;
    std::int64_t n_used = 0;
    std::vector<std::string> warnings;

    Index p() const noexcept {
        return static_cast<Index>(std::lround(std::sqrt(static_cast<double>(matrix.rows()))));
    }
};

struct VR {
    Matrix matrix;  // p^2 x p^2
};

struct VSigmaOptions {
    unsigned threads = 1;       // 0 = hardware concurrency
    Index block_rows = 256;     // observations per reduction block
    Index blocks_per_wave = 64;
    double psd_tolerance = 1e-8;
};

namespace detail {

struct HalfVec {
    explicit HalfVec(Index p) : p(p), index(p * p) {
        Index h = 0;
        for (Index j = 0; j < p; ++j) {
            for (Index i = j; i < p; ++i) {
                rows.push_back(i);
                cols.push_back(j);
                index[vec_index(i, j, p)] = h;
                index[vec_index(j, i, p)] = h;
                ++h;
            }
        }
    }
    Index size() const noexcept { return static_cast<Index>(rows.size()); }

    Index p;
    std::vector<Index> rows, cols;
    std::vector<Index> index;  // full vec position -> half-vec position
};

inline Matrix expand_half(const Matrix& half, const HalfVec& hv) {
    const Index pp = hv.p * hv.p;
    Matrix full(pp, pp);
    for (Index b = 0; b < pp; ++b)
        for (Index a = 0; a < pp; ++a) full(a, b) = half(hv.index[a], hv.index[b]);
    return full;
}

// Negative eigenvalues above -tol * max(1, lambda_max) are truncated to zero;
// anything more negative means the estimator is broken.
inline void repair_psd(Matrix& m, double tol, std::vector<std::string>& warnings) {
    Eigen::LDLT<Matrix> ldlt(m);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) return;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
    const Vector& ev = eig.eigenvalues();
    const double floor = -tol * std::max(1.0, ev(ev.size() - 1));
    if (ev(0) >= 0.0) return;
    if (ev(0) < floor) {
        throw NotPositiveSemidefinite("V_Sigma has eigenvalue " + std::to_string(ev(0)));
    }
    m = eig.eigenvectors() * ev.cwiseMax(0.0).asDiagonal() * eig.eigenvectors().transpose();
    m = symmetrize(m);
    warnings.emplace_back("V_Sigma: truncated negative eigenvalue " + std::to_string(ev(0)));
}

}  // namespace detail

/// Gaussian fourth-moment form 2 M_s (Sigma (x) Sigma): the covariance of
/// entries (i,j) and (k,l) is s_ik s_jl + s_il s_jk.
inline VSigma vsigma_gaussian(const Matrix& sigma_hat, const VSigmaOptions& opts = {}) {
    if (sigma_hat.rows() != sigma_hat.cols() || sigma_hat.rows() < 1) {
        throw DimensionMismatch("vsigma_gaussian requires a square matrix");
    }
    const Index p = sigma_hat.rows();
    const detail::HalfVec hv(p);
    Matrix half(hv.size(), hv.size());
    for (Index b = 0; b < hv.size(); ++b) {
        const Index k = hv.rows[b], l = hv.cols[b];
        for (Index a = 0; a < hv.size(); ++a) {
            const Index i = hv.rows[a], j = hv.cols[a];
            half(a, b) = sigma_hat(i, k) * sigma_hat(j, l) + sigma_hat(i, l) * sigma_hat(j, k);
        }
    }
    VSigma out;
    out.method = VSigmaMethod::gaussian;
    detail::repair_psd(half, opts.psd_tolerance, out.warnings);
    out.matrix = detail::expand_half(half, hv);
    return out;
}

/// Empirical estimator n^{-1} sum_i (vec(x_i x_i') - vec(S))(...)' with S =
/// X'X/n. Observations are reduced in fixed-size blocks whose partial sums
/// are added in block order, so the result does not depend on the thread
/// count.
inline VSigma vsigma_empirical(const CovariateMatrix& x, const VSigmaOptions& opts = {}) {
    if (!x.centered()) throw InvalidArgument("vsigma_empirical requires a centered matrix");
    if (opts.block_rows < 1 || opts.blocks_per_wave < 1) {
        throw InvalidArgument("vsigma_empirical: block sizes must be positive");
    }
    const Matrix& xv = x.values();
    const Index n = x.n(), p = x.p();
    const detail::HalfVec hv(p);
    const Index q = hv.size();

    VSigma out;
    out.method = VSigmaMethod::empirical;
    out.n_used = n;
    if (n < p + 1) {
        out.warnings.push_back("TooFewObservations: " + std::to_string(n) + " observations for " +
                               std::to_string(p) + " covariates");
    }

    Matrix cov = Matrix::Zero(p, p);
    cov.selfadjointView<Eigen::Lower>().rankUpdate(xv.transpose());
    cov /= static_cast<double>(n);
    Vector cov_half(q);
    for (Index h = 0; h < q; ++h) cov_half(h) = cov(hv.rows[h], hv.cols[h]);

    const Index n_blocks = (n + opts.block_rows - 1) / opts.block_rows;
    unsigned threads = opts.threads == 0 ? std::max(1u, std::thread::hardware_concurrency())
                                         : opts.threads;

    auto block_gram = [&](Index block, Matrix& gram) {
        const Index begin = block * opts.block_rows;
        const Index rows = std::min(opts.block_rows, n - begin);
        Matrix z(q, rows);
        for (Index r = 0; r < rows; ++r) {
            const auto obs = xv.row(begin + r);
            for (Index h = 0; h < q; ++h) z(h, r) = obs(hv.rows[h]) * obs(hv.cols[h]) - cov_half(h);
        }
        gram.setZero(q, q);
        gram.selfadjointView<Eigen::Lower>().rankUpdate(z);
    };

    Matrix total = Matrix::Zero(q, q);
    std::vector<Matrix> partial(static_cast<std::size_t>(std::min(n_blocks, opts.blocks_per_wave)));
    for (Index wave = 0; wave < n_blocks; wave += opts.blocks_per_wave) {
        const Index wave_size = std::min(opts.blocks_per_wave, n_blocks - wave);
        std::atomic<Index> next{0};
        auto worker = [&] {
            for (Index b = next++; b < wave_size; b = next++) {
                block_gram(wave + b, partial[static_cast<std::size_t>(b)]);
            }
        };
        const unsigned used = static_cast<unsigned>(std::min<Index>(threads, wave_size));
        if (used <= 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            pool.reserve(used);
            for (unsigned t = 0; t < used; ++t) pool.emplace_back(worker);
            for (auto& th : pool) th.join();
        }
        for (Index b = 0; b < wave_size; ++b) total += partial[static_cast<std::size_t>(b)];
    }
    total = total.selfadjointView<Eigen::Lower>();
    total /= static_cast<double>(n);

    detail::repair_psd(total, opts.psd_tolerance, out.warnings);
    out.matrix = detail::expand_half(total, hv);
    return out;
}

/// Jacobian of the covariance -> correlation map at unit variances,
/// I - 1/2 [(I (x) R) + (R (x) I)] Lambda. Dense; used for checking.
inline Matrix correlation_jacobian(const Matrix& r) {
    const Index p = r.rows();
    const Matrix eye = Matrix::Identity(p, p);
    Matrix kron_ir = Matrix::Zero(p * p, p * p), kron_ri = Matrix::Zero(p * p, p * p);
    for (Index a = 0; a < p; ++a) {
        for (Index c = 0; c < p; ++c) {
            kron_ir.block(a * p, c * p, p, p) = eye(a, c) * r;
            kron_ri.block(a * p, c * p, p, p) = r(a, c) * eye;
        }
    }
    Matrix psi = Matrix::Identity(p * p, p * p) - 0.5 * (kron_ir + kron_ri) * diag_selector(p);
    return psi;
}

/// V_R = Psi V_Sigma Psi'. Psi only mixes in the p diagonal coordinates, so
/// the product is formed from those columns directly (O(p^5)). Rows and
/// columns belonging to diagonal entries are set to exactly zero.
inline VR vr_from_vsigma(const VSigma& vsig, const CorrelationEstimate& r) {
    const Index p = r.p();
    const Index pp = p * p;
    if (vsig.matrix.rows() != pp || vsig.matrix.cols() != pp) {
        throw DimensionMismatch("V_Sigma is not p^2 x p^2 for the given correlation matrix");
    }
    const Matrix& v = vsig.matrix;
    // B_d(vec(i,j), k) = delta_jk R_ik + delta_ik R_jk
    Matrix bd = Matrix::Zero(pp, p);
    for (Index j = 0; j < p; ++j) {
        for (Index i = 0; i < p; ++i) {
            bd(vec_index(i, j, p), j) += r.matrix(i, j);
            bd(vec_index(i, j, p), i) += r.matrix(j, i);
        }
    }
    Matrix v_d(pp, p);  // V E
    Matrix v_dd(p, p);  // E' V E
    for (Index k = 0; k < p; ++k) v_d.col(k) = v.col(vec_index(k, k, p));
    for (Index k = 0; k < p; ++k) v_dd.row(k) = v_d.row(vec_index(k, k, p));

    const Matrix cross = bd * v_d.transpose();  // B_d E' V
    Matrix out = v - 0.5 * cross - 0.5 * cross.transpose() + 0.25 * bd * v_dd * bd.transpose();
    out = symmetrize(out);
    for (Index k = 0; k < p; ++k) {
        out.row(vec_index(k, k, p)).setZero();
        out.col(vec_index(k, k, p)).setZero();
    }
    return VR{std::move(out)};
}

/// (beta (x) A) as a p^2 x p matrix: rows vec_index(b, a) hold beta_a A.row(b).
inline Matrix kron_vector_matrix(const Vector& beta, const Matrix& a) {
    const Index p = a.rows();
    Matrix out(beta.size() * p, a.cols());
    for (Index k = 0; k < beta.size(); ++k) out.middleRows(k * p, p) = beta(k) * a;
    return out;
}

/// Reference-panel corrected covariance of the plug-in estimator:
///   (sigma2 / n_o) R^{-1} + (n_o + n_r)/(n_o n_r) (b' (x) R^{-1}) V_R (b (x) R^{-1}).
inline Matrix sigma_mc(const Vector& beta, const CorrelationEstimate& r_ref, const VR& vr,
                       double sigma2, std::int64_t n_o, std::int64_t n_r,
                       const SolvePolicy& policy = {}) {
    const Index p = r_ref.p();
    if (beta.size() != p) throw DimensionMismatch("sigma_mc: beta and R differ in size");
    if (vr.matrix.rows() != p * p) throw DimensionMismatch("sigma_mc: V_R has the wrong size");
    if (n_o < 1 || n_r < 1) throw InvalidArgument("sigma_mc: sample sizes must be positive");
    if (!beta.allFinite() || !std::isfinite(sigma2)) throw InvalidArgument("sigma_mc: non-finite input");

    const Matrix rinv = SpdSolver(r_ref.matrix, policy).inverse();
    const double no = static_cast<double>(n_o), nr = static_cast<double>(n_r);
    Matrix out = (sigma2 / no) * rinv;
    if (!beta.isZero(0.0)) {
        const Matrix j = kron_vector_matrix(beta, rinv);
        out += ((no + nr) / (no * nr)) * (j.transpose() * vr.matrix * j);
    }
    return symmetrize(out);
}

struct FitOptions {
    CovMethod method = CovMethod::var_corrected_empirical;
    Sigma2Options sigma2;
    bool threshold = true;
    ThresholdRule threshold_rule;
    SolvePolicy solve;
    VSigmaOptions vsigma;
    Index max_covariates = 200;
};

struct JointFit {
    JointEstimate estimate;
    CorrelationEstimate r_ref;
    Matrix naive;             // (sigma2 / n_o) R^{-1} with the same sigma2
    Vector beta_for_cov;      // coefficients plugged into the correction
};

/// Plug-in estimate plus its covariance from a summary and a standardized
/// reference panel. `beta_override` replaces beta_mc inside the covariance
/// (used for the selection-adjusted estimate); thresholding still applies.
inline JointFit fit_joint(const MarginalSummary& summary, const CovariateMatrix& panel,
                          const FitOptions& opts = {}, const Vector* beta_override = nullptr) {
    validate(summary);
    if (!panel.standardized()) throw InvalidArgument("reference panel must be standardized");
    if (panel.p() != summary.p()) {
        throw DimensionMismatch("summary has " + std::to_string(summary.p()) +
                                " coefficients but the panel has " + std::to_string(panel.p()) +
                                " columns");
    }
    if (panel.p() > opts.max_covariates) {
        throw InvalidArgument("region has " + std::to_string(panel.p()) +
                              " covariates; the limit is " + std::to_string(opts.max_covariates));
    }

    JointFit fit;
    fit.r_ref = correlation(panel);
    const SpdSolver solver(fit.r_ref.matrix, opts.solve);
    JointEstimate& est = fit.estimate;
    if (solver.warning()) est.warnings.push_back(solver.warning()->message());
    est.method = opts.method;
    est.n_o = summary.n_o;
    est.n_r = panel.n();
    est.beta_mc = solver.solve(summary.beta_m);

    const Vector& beta_src = beta_override ? *beta_override : est.beta_mc;
    est.sigma2 = sigma2_hat(beta_src, fit.r_ref, opts.sigma2);
    const Matrix rinv = solver.inverse();
    fit.naive = (est.sigma2 / static_cast<double>(est.n_o)) * rinv;

    fit.beta_for_cov = opts.threshold
                           ? threshold_beta(beta_src, fit.r_ref, est.sigma2, est.n_o, opts.threshold_rule)
                           : beta_src;

    if (opts.method == CovMethod::naive) {
        est.sigma_mc = fit.naive;
        return fit;
    }
    if (fit.beta_for_cov.isZero(0.0)) {
        // Correction vanishes at beta = 0; skip the O(n p^4) work.
        est.sigma_mc = fit.naive;
        return fit;
    }
    VSigma vs = opts.method == CovMethod::var_corrected_gaussian
                    ? vsigma_gaussian(fit.r_ref.matrix, opts.vsigma)
                    : vsigma_empirical(panel, opts.vsigma);
    for (auto& w : vs.warnings) est.warnings.push_back(std::move(w));
    const VR vr = vr_from_vsigma(vs, fit.r_ref);
    est.sigma_mc = sigma_mc(fit.beta_for_cov, fit.r_ref, vr, est.sigma2, est.n_o, est.n_r, opts.solve);
    return fit;
}

}  // namespace refjoint
