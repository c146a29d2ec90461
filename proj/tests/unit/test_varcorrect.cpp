#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace refjoint;
using testutil::max_rel;

namespace {

CorrelationEstimate corr_of(const Matrix& r) { return {r, 100, PanelSource::reference}; }

VSigmaOptions small_blocks(unsigned threads) {
    VSigmaOptions o;
    o.threads = threads;
    o.block_rows = 16;
    o.blocks_per_wave = 3;
    return o;
}

}  // namespace

TEST(VSigma, GaussianMatchesKroneckerForm) {
    std::mt19937_64 eng(21);
    for (Index p = 1; p <= 4; ++p) {
        const Matrix s = oracle::random_spd(p, eng);
        const VSigma v = vsigma_gaussian(s);
        EXPECT_LT(max_rel(v.matrix, oracle::vsigma_gaussian(s)), 1e-14) << p;
        EXPECT_EQ(v.p(), p);
        EXPECT_TRUE(v.warnings.empty());
    }
}

TEST(VSigma, EmpiricalMatchesDirectSum) {
    const Matrix s = oracle::ar1(4, 0.7);
    const CovariateMatrix x = center(testutil::gaussian_rows(500, s, 22));
    const VSigma v = vsigma_empirical(x, small_blocks(1));
    EXPECT_LT(max_rel(v.matrix, oracle::vsigma_empirical(x.values())), 1e-12);
    EXPECT_EQ(v.n_used, 500);
}

TEST(VSigma, EmpiricalIsBitIdenticalAcrossThreadCounts) {
    const CovariateMatrix x = standardize(testutil::gaussian_rows(1000, oracle::ar1(5, 0.5), 23));
    const Matrix one = vsigma_empirical(x, small_blocks(1)).matrix;
    for (unsigned t : {2u, 3u, 7u}) EXPECT_EQ(vsigma_empirical(x, small_blocks(t)).matrix, one) << t;
    EXPECT_EQ(vsigma_empirical(x, {}).matrix, vsigma_empirical(x, VSigmaOptions{4, 256, 64, 1e-8}).matrix);
}

TEST(VSigma, EmpiricalDoesNotDependOnObservationOrder) {
    const Matrix raw = testutil::gaussian_rows(300, oracle::ar1(3, 0.5), 24);
    Matrix rev = raw.colwise().reverse();
    const Matrix a = vsigma_empirical(center(raw)).matrix;
    const Matrix b = vsigma_empirical(center(rev)).matrix;
    EXPECT_LT(max_rel(a, b), 1e-12);
}

TEST(VSigma, WarnsWithFewerObservationsThanCovariates) {
    const CovariateMatrix x = center(testutil::gaussian_rows(4, Matrix::Identity(5, 5), 25));
    const VSigma v = vsigma_empirical(x);
    ASSERT_FALSE(v.warnings.empty());
    EXPECT_NE(v.warnings[0].find("TooFewObservations"), std::string::npos);
}

TEST(VSigma, RequiresCenteredInput) {
    EXPECT_THROW(vsigma_empirical(CovariateMatrix{}), InvalidArgument);
}

TEST(VSigma, PsdRepairTruncatesTinyAndRejectsLargeNegatives) {
    Matrix m = Matrix::Identity(3, 3);
    m(2, 2) = -1e-12;
    std::vector<std::string> warnings;
    detail::repair_psd(m, 1e-8, warnings);
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Matrix>(m).eigenvalues()(0), -1e-15);
    EXPECT_EQ(warnings.size(), 1u);

    Matrix bad = Matrix::Identity(3, 3);
    bad(1, 1) = -0.1;
    EXPECT_THROW(detail::repair_psd(bad, 1e-8, warnings), NotPositiveSemidefinite);
}

TEST(VR, JacobianMatchesKroneckerForm) {
    std::mt19937_64 eng(26);
    for (Index p = 1; p <= 4; ++p) {
        const Matrix r = oracle::random_correlation(p, eng);
        EXPECT_LT((correlation_jacobian(r) - oracle::psi(r)).cwiseAbs().maxCoeff(), 1e-15);
    }
}

TEST(VR, StructuredProductMatchesDense) {
    std::mt19937_64 eng(27);
    for (Index p = 1; p <= 5; ++p) {
        const Matrix r = oracle::random_correlation(p, eng);
        const CovariateMatrix x = standardize(testutil::gaussian_rows(200, r, 27, static_cast<std::uint64_t>(p)));
        const VSigma vs = vsigma_empirical(x);
        const VR vr = vr_from_vsigma(vs, corr_of(r));
        EXPECT_LT(max_rel(vr.matrix, oracle::vr(vs.matrix, r)), 1e-12) << p;
    }
}

TEST(VR, DiagonalCoordinatesAreAnnihilated) {
    const Matrix r = oracle::ar1(4, 0.8);
    const VR vr = vr_from_vsigma(vsigma_gaussian(r), corr_of(r));
    const Matrix lam = diag_selector(4);
    EXPECT_EQ((lam * vr.matrix * lam).cwiseAbs().maxCoeff(), 0.0);
    for (Index k = 0; k < 4; ++k) {
        EXPECT_EQ(vr.matrix.row(vec_index(k, k, 4)).cwiseAbs().maxCoeff(), 0.0);
    }
}

TEST(VR, BivariateGaussianGivesClassicalCorrelationVariance) {
    for (double rho : {0.0, 0.5, 0.9, -0.3}) {
        Matrix r(2, 2);
        r << 1.0, rho, rho, 1.0;
        const VR vr = vr_from_vsigma(vsigma_gaussian(r), corr_of(r));
        const double expected = (1 - rho * rho) * (1 - rho * rho);
        EXPECT_NEAR(vr.matrix(vec_index(1, 0, 2), vec_index(1, 0, 2)), expected, 1e-14) << rho;
        EXPECT_NEAR(vr.matrix(vec_index(1, 0, 2), vec_index(0, 1, 2)), expected, 1e-14) << rho;
    }
}

TEST(VR, MonteCarloVarianceOfSampleCorrelation) {
    const double rho = 0.5;
    Matrix r(2, 2);
    r << 1.0, rho, rho, 1.0;
    const Index n = 2000;
    const int reps = 1500;
    double sum = 0, sum2 = 0;
    for (int k = 0; k < reps; ++k) {
        const CovariateMatrix x = standardize(testutil::gaussian_rows(n, r, 28, static_cast<std::uint64_t>(k)));
        const double r12 = correlation(x).matrix(0, 1);
        sum += r12;
        sum2 += r12 * r12;
    }
    const double var = (sum2 - sum * sum / reps) / (reps - 1);
    const double expected = (1 - rho * rho) * (1 - rho * rho);
    EXPECT_NEAR(n * var / expected, 1.0, 0.1);
}

TEST(VSigma, GaussianAndEmpiricalConvergeOnGaussianData) {
    const Matrix s = oracle::ar1(3, 0.5);
    double last = 1e300;
    for (Index n : {1000, 10000, 100000}) {
        const CovariateMatrix x = standardize(testutil::gaussian_rows(n, s, 29));
        const CorrelationEstimate r = correlation(x);
        const double gap = (vsigma_empirical(x).matrix - vsigma_gaussian(r.matrix).matrix).cwiseAbs().maxCoeff();
        EXPECT_LT(gap, last) << n;
        last = gap;
    }
    EXPECT_LT(last, 0.1);
}

TEST(SigmaMc, MatchesDenseFormula) {
    std::mt19937_64 eng(30);
    for (Index p = 1; p <= 5; ++p) {
        const Matrix r = oracle::random_correlation(p, eng);
        const VSigma vs = vsigma_gaussian(r);
        const VR vr = vr_from_vsigma(vs, corr_of(r));
        const Vector beta = oracle::random_matrix(p, 1, eng) * 0.1;
        const Matrix got = sigma_mc(beta, corr_of(r), vr, 0.7, 5000, 800);
        const Matrix want = oracle::sigma_mc(beta, r, oracle::vr(vs.matrix, r), 0.7, 5000, 800);
        EXPECT_LT(max_rel(got, want), 1e-12) << p;
    }
}

TEST(SigmaMc, KroneckerRowsMatchDenseKron) {
    std::mt19937_64 eng(31);
    const Vector b = oracle::random_matrix(3, 1, eng);
    const Matrix a = oracle::random_matrix(3, 3, eng);
    EXPECT_EQ(kron_vector_matrix(b, a), oracle::kron(Matrix(b), a));
}

TEST(SigmaMc, EqualsNaiveAtZero) {
    const Matrix r = oracle::ar1(6, 0.8);
    const VR vr = vr_from_vsigma(vsigma_gaussian(r), corr_of(r));
    const Matrix got = sigma_mc(Vector::Zero(6), corr_of(r), vr, 1.0, 10000, 500);
    EXPECT_EQ(got, naive_cov(corr_of(r), 1.0, 10000));
}

TEST(SigmaMc, CorrectionOnlyAddsVariance) {
    std::mt19937_64 eng(32);
    for (int rep = 0; rep < 20; ++rep) {
        const Index p = 4;
        const Matrix r = oracle::random_correlation(p, eng);
        const CovariateMatrix x = standardize(testutil::gaussian_rows(300, r, 32, static_cast<std::uint64_t>(rep)));
        const CorrelationEstimate est = correlation(x);
        const VR vr = vr_from_vsigma(vsigma_empirical(x), est);
        const Vector beta = oracle::random_matrix(p, 1, eng) * 0.2;
        const Matrix diff = sigma_mc(beta, est, vr, 0.9, 4000, 300) - sigma_mc(Vector::Zero(p), est, vr, 0.9, 4000, 300);
        const double min_eig = Eigen::SelfAdjointEigenSolver<Matrix>(diff).eigenvalues()(0);
        EXPECT_GE(min_eig, -1e-14 * diff.cwiseAbs().maxCoeff());
    }
}

TEST(SigmaMc, CorrectionScalesWithSampleSizes) {
    const Matrix r = oracle::ar1(4, 0.6);
    const CorrelationEstimate est = corr_of(r);
    const VR vr = vr_from_vsigma(vsigma_gaussian(r), est);
    Vector beta(4);
    beta << 0.2, 0, -0.1, 0.05;
    const Matrix naive = naive_cov(est, 0.8, 10000);
    const Matrix c1 = sigma_mc(beta, est, vr, 0.8, 10000, 500) - naive;
    const Matrix c2 = sigma_mc(beta, est, vr, 0.8, 10000, 2000) - naive;
    const double f1 = (10000.0 + 500.0) / (10000.0 * 500.0);
    const double f2 = (10000.0 + 2000.0) / (10000.0 * 2000.0);
    EXPECT_LT(max_rel(c1 / f1, c2 / f2), 1e-10);
}

TEST(FitJoint, NullSummaryGivesNaiveCovariance) {
    const Matrix s = oracle::ar1(5, 0.8);
    int zeroed = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const CovariateMatrix xo = standardize(testutil::gaussian_rows(4000, s, 33 + seed, 0));
        const CovariateMatrix xr = standardize(testutil::gaussian_rows(300, s, 33 + seed, 1));
        Rng rng(33 + seed, 2);
        const MarginalSummary summary = marginal_assoc(xo, phenotype(xo, Vector::Zero(5), 0.5, rng));
        FitOptions naive_opts;
        naive_opts.method = CovMethod::naive;
        const JointFit a = fit_joint(summary, xr, naive_opts);
        const JointFit b = fit_joint(summary, xr);
        if (!b.beta_for_cov.isZero(0.0)) continue;
        ++zeroed;
        EXPECT_LT((a.estimate.sigma_mc - b.estimate.sigma_mc).cwiseAbs().maxCoeff(), 1e-10);
    }
    EXPECT_GT(zeroed, 0);
}

TEST(FitJoint, SamePanelAndNullReportsAgree) {
    const Matrix s = oracle::ar1(4, 0.5);
    int zeroed = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const CovariateMatrix xo = standardize(testutil::gaussian_rows(3000, s, 34 + seed));
        Rng rng(34 + seed, 1);
        const MarginalSummary summary = marginal_assoc(xo, phenotype(xo, Vector::Zero(4), 0.5, rng));
        FitOptions naive_opts;
        naive_opts.method = CovMethod::naive;
        const JointFit corrected = fit_joint(summary, xo);
        if (!corrected.beta_for_cov.isZero(0.0)) continue;
        ++zeroed;
        const TestReport a = wald_tests(fit_joint(summary, xo, naive_opts).estimate, 0.05);
        const TestReport b = wald_tests(corrected.estimate, 0.05);
        EXPECT_EQ(a.pvalue, b.pvalue);
        EXPECT_EQ(a.rejected, b.rejected);
    }
    EXPECT_GT(zeroed, 0);
}

TEST(FitJoint, CorrectedSeExceedsNaiveWithSignal) {
    const Matrix s = oracle::ar1(5, 0.8);
    const CovariateMatrix xo = standardize(testutil::gaussian_rows(10000, s, 35, 0));
    const CovariateMatrix xr = standardize(testutil::gaussian_rows(500, s, 35, 1));
    Vector beta = Vector::Zero(5);
    beta(0) = beta(4) = 1.0;
    Rng rng(35, 2);
    const MarginalSummary summary = marginal_assoc(xo, phenotype(xo, beta, 0.1, rng));
    const JointFit fit = fit_joint(summary, xr);
    EXPECT_FALSE(fit.beta_for_cov.isZero(0.0));
    EXPECT_GT(fit.estimate.sigma_mc(0, 0), fit.naive(0, 0));
    EXPECT_EQ(fit.estimate.n_r, 500);
    FitOptions g;
    g.method = CovMethod::var_corrected_gaussian;
    EXPECT_GT(fit_joint(summary, xr, g).estimate.sigma_mc(0, 0), fit.naive(0, 0));
}

TEST(FitJoint, RejectsOversizedRegionsAndUnstandardizedPanels) {
    MarginalSummary s;
    s.beta_m = Vector::Zero(3);
    s.n_o = 100;
    FitOptions o;
    o.max_covariates = 2;
    const CovariateMatrix x = standardize(testutil::gaussian_rows(50, Matrix::Identity(3, 3), 36));
    EXPECT_THROW(fit_joint(s, x, o), InvalidArgument);
    EXPECT_THROW(fit_joint(s, center(x.values())), InvalidArgument);
}
