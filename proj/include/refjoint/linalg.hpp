#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "refjoint/error.hpp"

// Dense-matrix machinery shared by every other module: covariate
// standardization, correlation, the vec/Kronecker toolkit, and a guarded
// symmetric positive-definite solver.
//
// Moments use divisor n throughout (not n - 1), so that the correlation of a
// standardized matrix is exactly X'X / n. The two conventions differ at
// O(1/n); keep this in mind when comparing against other software.
namespace refjoint {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

class CovariateMatrix {
public:
    CovariateMatrix() = default;

    const Matrix& values() const noexcept { return values_; }
    Index n() const noexcept { return values_.rows(); }
    Index p() const noexcept { return values_.cols(); }
    bool standardized() const noexcept { return standardized_; }
    bool centered() const noexcept { return centered_; }

    friend CovariateMatrix standardize(const Matrix& values);
    friend CovariateMatrix center(const Matrix& values);

private:
    CovariateMatrix(Matrix values, bool standardized, bool centered)
        : values_(std::move(values)), standardized_(standardized), centered_(centered) {}

    Matrix values_;
    bool standardized_ = false;
    bool centered_ = false;
};

namespace detail {

inline void check_shape(const Matrix& values) {
    if (values.rows() < 2) throw InvalidArgument("covariate matrix needs at least 2 rows");
    if (values.cols() < 1) throw InvalidArgument("covariate matrix needs at least 1 column");
    if (!values.allFinite()) throw InvalidArgument("covariate matrix contains non-finite values");
}

}  // namespace detail

/// Centers each column and scales it to unit standard deviation (divisor n).
inline CovariateMatrix standardize(const Matrix& values) {
    detail::check_shape(values);
    const double n = static_cast<double>(values.rows());
    Matrix out(values.rows(), values.cols());
    for (Index j = 0; j < values.cols(); ++j) {
        const double mean = values.col(j).sum() / n;
        out.col(j) = values.col(j).array() - mean;
        const double sd = std::sqrt(out.col(j).squaredNorm() / n);
        const double scale = values.col(j).cwiseAbs().maxCoeff();
        if (!(sd > 1e-12 * std::max(scale, 1e-300))) {
            throw ConstantColumn("column " + std::to_string(j + 1) + " has zero standard deviation");
        }
        out.col(j) /= sd;
    }
    return CovariateMatrix(std::move(out), true, true);
}

inline CovariateMatrix center(const Matrix& values) {
    detail::check_shape(values);
    const double n = static_cast<double>(values.rows());
    Matrix out = values.rowwise() - values.colwise().sum() / n;
    return CovariateMatrix(std::move(out), false, true);
}

enum class PanelSource { reference, original };

struct CorrelationEstimate {
    Matrix matrix;
    std::int64_t n_panel = 0;
    PanelSource source = PanelSource::reference;

    Index p() const noexcept { return matrix.rows(); }
};

/// X'X / n for a standardized matrix, rescaled so the diagonal is exactly one
/// and every entry lies in [-1, 1].
inline CorrelationEstimate correlation(const CovariateMatrix& x,
                                       PanelSource source = PanelSource::reference) {
    if (!x.standardized()) throw InvalidArgument("correlation requires a standardized matrix");
    const Index p = x.p();
    Matrix gram = Matrix::Zero(p, p);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(x.values().transpose());
    gram /= static_cast<double>(x.n());
    Matrix r(p, p);
    for (Index j = 0; j < p; ++j) {
        r(j, j) = 1.0;
        for (Index i = j + 1; i < p; ++i) {
            const double v =
                std::clamp(gram(i, j) / std::sqrt(gram(i, i) * gram(j, j)), -1.0, 1.0);
            r(i, j) = v;
            r(j, i) = v;
        }
    }
    return {std::move(r), static_cast<std::int64_t>(x.n()), source};
}

/// Column-major vec position of entry (row, col) of a p x p matrix.
constexpr Index vec_index(Index row, Index col, Index p) noexcept { return col * p + row; }

inline Vector vec(const Matrix& a) { return Eigen::Map<const Vector>(a.data(), a.size()); }

inline Matrix unvec(const Vector& v, Index p) { return Eigen::Map<const Matrix>(v.data(), p, p); }

/// K with K vec(A) = vec(A').
inline Matrix commutation_matrix(Index p) {
    Matrix k = Matrix::Zero(p * p, p * p);
    for (Index c = 0; c < p; ++c)
        for (Index r = 0; r < p; ++r) k(vec_index(c, r, p), vec_index(r, c, p)) = 1.0;
    return k;
}

/// M_s = (I + K) / 2, the orthogonal projector onto vec of symmetric matrices.
inline Matrix symmetrizer(Index p) {
    Matrix m = commutation_matrix(p);
    m.diagonal().array() += 1.0;
    return 0.5 * m;
}

/// Lambda = sum_i (e_i e_i' (x) e_i e_i'), keeping only diagonal coordinates.
inline Matrix diag_selector(Index p) {
    Matrix l = Matrix::Zero(p * p, p * p);
    for (Index i = 0; i < p; ++i) l(vec_index(i, i, p), vec_index(i, i, p)) = 1.0;
    return l;
}

struct SolvePolicy {
    double warn_ratio = 1e-8;   // ridge is added below this lambda_min / lambda_max
    double hard_ratio = 1e-12;  // hard error below this ratio
    double ridge = 1e-6;
};

struct RidgeWarning {
    double min_eigenvalue = 0.0;
    double max_eigenvalue = 0.0;
    double ridge = 0.0;

    std::string message() const {
        std::ostringstream os;
        os.precision(6);
        os << "near-singular matrix (min eigenvalue " << min_eigenvalue << ", max "
           << max_eigenvalue << "); added ridge " << ridge;
        return os.str();
    }
};

/// Cholesky-backed solver for symmetric matrices that applies the ridge
/// policy once at construction and reuses the factor afterwards.
class SpdSolver {
public:
    explicit SpdSolver(const Matrix& m, const SolvePolicy& policy = {}) {
        if (m.rows() != m.cols() || m.rows() == 0) {
            throw DimensionMismatch("solve_spd requires a non-empty square matrix");
        }
        if (!m.allFinite()) throw InvalidArgument("solve_spd: matrix has non-finite entries");
        const double scale = std::max(m.cwiseAbs().maxCoeff(), 1e-300);
        if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
            throw InvalidArgument("solve_spd: matrix is not symmetric");
        }
        Eigen::SelfAdjointEigenSolver<Matrix> eig(m, Eigen::EigenvaluesOnly);
        min_eig_ = eig.eigenvalues()(0);
        max_eig_ = eig.eigenvalues()(m.rows() - 1);
        const double ratio = max_eig_ > 0.0 ? min_eig_ / max_eig_ : -1.0;
        if (ratio < policy.hard_ratio) throw SingularMatrix(describe_singular(m));

        Matrix work = m;
        if (ratio < policy.warn_ratio) {
            work.diagonal().array() += policy.ridge;
            warning_ = RidgeWarning{min_eig_, max_eig_, policy.ridge};
        }
        llt_.compute(work);
        if (llt_.info() != Eigen::Success) throw SingularMatrix(describe_singular(m));
    }

    template <class Rhs>
    Matrix solve(const Eigen::MatrixBase<Rhs>& rhs) const {
        if (rhs.rows() != llt_.rows()) throw DimensionMismatch("solve_spd: rhs has wrong length");
        return llt_.solve(rhs);
    }

    Vector solve(const Vector& rhs) const {
        if (rhs.size() != llt_.rows()) throw DimensionMismatch("solve_spd: rhs has wrong length");
        return llt_.solve(rhs);
    }

    Matrix inverse() const {
        Matrix inv = llt_.solve(Matrix::Identity(llt_.rows(), llt_.rows()));
        return 0.5 * (inv + inv.transpose());
    }

    const std::optional<RidgeWarning>& warning() const noexcept { return warning_; }
    double min_eigenvalue() const noexcept { return min_eig_; }
    double max_eigenvalue() const noexcept { return max_eig_; }

private:
    static std::string describe_singular(const Matrix& m) {
        Eigen::SelfAdjointEigenSolver<Matrix> eig(m, Eigen::EigenvaluesOnly);
        // Report the most collinear pair; for a correlation matrix this is the
        // first thing to prune.
        Index bi = 0, bj = 0;
        double best = -1.0;
        for (Index j = 0; j < m.cols(); ++j) {
            for (Index i = j + 1; i < m.rows(); ++i) {
                const double denom = std::sqrt(std::abs(m(i, i) * m(j, j)));
                const double c = denom > 0.0 ? std::abs(m(i, j)) / denom : 0.0;
                if (c > best) {
                    best = c;
                    bi = i;
                    bj = j;
                }
            }
        }
        std::ostringstream os;
        os.precision(6);
        os << "matrix is singular (min eigenvalue " << eig.eigenvalues()(0) << ", max "
           << eig.eigenvalues()(m.rows() - 1) << ")";
        if (best >= 0.0) {
            os << "; most collinear pair: columns " << bj + 1 << " and " << bi + 1
               << " (|r| = " << best << ")";
        }
        return os.str();
    }

    Eigen::LLT<Matrix> llt_;
    std::optional<RidgeWarning> warning_;
    double min_eig_ = 0.0;
    double max_eig_ = 0.0;
};

template <class Rhs>
Matrix solve_spd(const Matrix& m, const Eigen::MatrixBase<Rhs>& rhs, const SolvePolicy& policy = {}) {
    return SpdSolver(m, policy).solve(rhs);
}

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

}  // namespace refjoint
