#include <gtest/gtest.h>

#include "ndmd/svd.hpp"
#include "oracles.hpp"

using namespace ndmd;
using testutil::gaussian_matrix;
using testutil::matrix_with_singular_values;
using testutil::reference_singular_values;

namespace {

double orthonormality_error(const RealMatrix& u) {
    const RealMatrix g = matmul(transpose(u), u);
    return frobenius_norm(sub(g, RealMatrix::identity(u.cols)));
}

}  // namespace

TEST(Svd, SingularValuesMatchSymmetricJacobiOracle) {
    Rng rng(31);
    const std::vector<std::pair<int, int>> shapes = {{5, 3}, {3, 5}, {8, 8}, {10, 4},
                                                     {1, 1}, {1, 5}, {6, 2}};
    for (auto [m, n] : shapes) {
        const RealMatrix a = gaussian_matrix(rng, m, n);
        const SvdResult s = svd_thin(a);
        const std::vector<double> ref = reference_singular_values(a);
        ASSERT_EQ(int(s.sigma.size()), std::min(m, n));
        for (std::size_t i = 0; i < s.sigma.size(); ++i)
            EXPECT_NEAR(s.sigma[i], ref[i], 1e-7 * std::max(ref[0], 1.0))
                << "shape " << m << "x" << n << " index " << i;
    }
}

TEST(Svd, FactorsAreOrthonormalAndReconstruct) {
    Rng rng(32);
    for (auto [m, n] : std::vector<std::pair<int, int>>{{7, 4}, {4, 7}, {9, 9}}) {
        const RealMatrix a = gaussian_matrix(rng, m, n);
        const SvdResult s = svd_thin(a);
        EXPECT_LT(orthonormality_error(s.U), 1e-10);
        EXPECT_LT(orthonormality_error(s.V), 1e-10);
        const double sigma1 = s.sigma[0];
        EXPECT_LT(frobenius_norm(sub(svd_reconstruct(s), a)), 1e-10 * std::max(sigma1, 1.0));
        for (std::size_t i = 1; i < s.sigma.size(); ++i)
            EXPECT_LE(s.sigma[i], s.sigma[i - 1]);
        // deterministic sign convention: dominant entry of each left vector positive
        for (int j = 0; j < s.U.cols; ++j) {
            int arg = 0;
            for (int i = 0; i < s.U.rows; ++i)
                if (std::abs(s.U(i, j)) > std::abs(s.U(arg, j))) arg = i;
            EXPECT_GT(s.U(arg, j), 0.0);
        }
    }
}

TEST(Svd, RecoversPlantedSpectrum) {
    Rng rng(33);
    const std::vector<double> planted = {5.0, 2.0, 1.0, 0.3};
    const RealMatrix a = matrix_with_singular_values(rng, 7, 5, planted);
    const SvdResult s = svd_thin(a);
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(s.sigma[i], planted[i], 1e-10 * planted[0]);
    EXPECT_LT(s.sigma[4], 1e-12 * planted[0]);
}

TEST(Svd, HandlesExactZeroColumnsAndZeroMatrix) {
    RealMatrix a(4, 3);
    a(0, 0) = 2.0;
    a(1, 0) = 1.0;  // columns 1 and 2 are exactly zero
    const SvdResult s = svd_thin(a);
    EXPECT_LT(orthonormality_error(s.U), 1e-12);
    EXPECT_NEAR(s.sigma[0], std::sqrt(5.0), 1e-12);
    EXPECT_DOUBLE_EQ(s.sigma[1], 0.0);
    EXPECT_DOUBLE_EQ(s.sigma[2], 0.0);

    const SvdResult z = svd_thin(RealMatrix(3, 3));
    EXPECT_LT(orthonormality_error(z.U), 1e-12);
    EXPECT_LT(orthonormality_error(z.V), 1e-12);
    for (double v : z.sigma) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Svd, TruncationSatisfiesEckartYoung) {
    Rng rng(34);
    const RealMatrix a = gaussian_matrix(rng, 8, 6);
    const std::vector<double> ref = reference_singular_values(a);
    for (int r : {1, 3, 5}) {
        const SvdResult s = svd_truncated(a, RankSpec::fixed(r));
        ASSERT_EQ(s.rank, r);
        double tail = 0.0;
        for (std::size_t i = r; i < ref.size(); ++i) tail += ref[i] * ref[i];
        const double err = frobenius_norm(sub(a, svd_reconstruct(s)));
        EXPECT_NEAR(err * err, tail, 1e-8 * std::max(tail, 1.0));
        // optimality against random rank-r competitors
        for (int trial = 0; trial < 3; ++trial) {
            const RealMatrix b =
                matmul(gaussian_matrix(rng, 8, r), gaussian_matrix(rng, r, 6));
            EXPECT_LE(err, frobenius_norm(sub(a, b)) + 1e-12);
        }
    }
}

TEST(Svd, RankSpecSelectsExpectedCount) {
    Rng rng(35);
    const std::vector<double> planted = {10.0, 5.0, 0.04, 1e-5};
    const RealMatrix a = matrix_with_singular_values(rng, 6, 5, planted);
    EXPECT_EQ(svd_truncated(a, RankSpec::full()).rank, 5);
    EXPECT_EQ(svd_truncated(a, RankSpec::fixed(2)).rank, 2);
    EXPECT_EQ(svd_truncated(a, RankSpec::threshold(0.001)).rank, 3);
    EXPECT_EQ(svd_truncated(a, RankSpec::threshold(0.3)).rank, 2);
    EXPECT_THROW(svd_truncated(a, RankSpec::fixed(6)), contract_violation);
    EXPECT_THROW(RankSpec::fixed(0), contract_violation);
    EXPECT_THROW(RankSpec::threshold(1.5), contract_violation);
}

TEST(Svd, PinvSatisfiesPenroseConditions) {
    Rng rng(36);
    const std::vector<RealMatrix> cases = {
        gaussian_matrix(rng, 6, 4),
        gaussian_matrix(rng, 4, 6),
        matrix_with_singular_values(rng, 5, 5, {3.0, 1.0, 0.2}),  // rank deficient
    };
    for (const RealMatrix& a : cases) {
        const RealMatrix x = pinv(a);
        EXPECT_LT(frobenius_norm(sub(matmul(matmul(a, x), a), a)), 1e-8);
        EXPECT_LT(frobenius_norm(sub(matmul(matmul(x, a), x), x)), 1e-8);
        const RealMatrix ax = matmul(a, x);
        const RealMatrix xa = matmul(x, a);
        EXPECT_LT(frobenius_norm(sub(ax, transpose(ax))), 1e-8);
        EXPECT_LT(frobenius_norm(sub(xa, transpose(xa))), 1e-8);
    }
}

TEST(Svd, ComplexPinvMatchesRealCaseAndPenrose) {
    Rng rng(37);
    const RealMatrix a = gaussian_matrix(rng, 5, 3);
    const ComplexMatrix ap = cpinv(promote(a));
    EXPECT_LT(frobenius_norm(sub(real_part(ap), pinv(a))), 1e-9);
    EXPECT_LT(frobenius_norm(imag_part(ap)), 1e-9);

    ComplexMatrix c(4, 6);
    for (auto& v : c.data) v = complexd(rng.normal(), rng.normal());
    const ComplexMatrix x = cpinv(c);
    EXPECT_LT(cfrobenius_norm(csub(cmatmul(cmatmul(c, x), c), c)), 1e-8);
    EXPECT_LT(cfrobenius_norm(csub(cmatmul(cmatmul(x, c), x), x)), 1e-8);
    const ComplexMatrix cx = cmatmul(c, x);
    const ComplexMatrix xc = cmatmul(x, c);
    EXPECT_LT(cfrobenius_norm(csub(cx, hermitian(cx))), 1e-8);
    EXPECT_LT(cfrobenius_norm(csub(xc, hermitian(xc))), 1e-8);
}

TEST(Svd, BackwardMatchesFiniteDifferences) {
    Rng rng(38);
    for (auto [m, n] : std::vector<std::pair<int, int>>{{5, 3}, {4, 6}, {6, 6}}) {
        const int k = std::min(m, n);
        // spectra with comfortable gaps keep the finite differences honest
        std::vector<double> planted(k);
        for (int i = 0; i < k; ++i) planted[i] = 4.0 - 0.7 * i;
        const RealMatrix a = matrix_with_singular_values(rng, m, n, planted);

        const RealMatrix wu = gaussian_matrix(rng, m, k);
        const RealMatrix wv = gaussian_matrix(rng, n, k);
        std::vector<double> ws(k);
        for (double& v : ws) v = rng.normal();

        const auto loss = [&](const RealMatrix& x) {
            const SvdResult s = svd_thin(x);
            double acc = 0.0;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < k; ++j) acc += wu(i, j) * s.U(i, j);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < k; ++j) acc += wv(i, j) * s.V(i, j);
            for (int j = 0; j < k; ++j) acc += ws[j] * s.sigma[j];
            return acc;
        };

        const SvdResult s = svd_thin(a);
        const RealMatrix analytic = svd_backward(s, &wu, &ws, &wv);
        const RealMatrix fd = testutil::fd_gradient(a, loss);
        EXPECT_LT(testutil::rel_diff(analytic, fd), 1e-6) << "shape " << m << "x" << n;
    }
}

TEST(Svd, BackwardClampsDegenerateGapsAndCountsThem) {
    Rng rng(39);
    {
        const RealMatrix a = matrix_with_singular_values(rng, 5, 4, {2.0, 2.0 + 1e-9, 1.0, 0.5});
        const SvdResult s = svd_thin(a);
        const RealMatrix gu = gaussian_matrix(rng, 5, 4);
        ClampStats stats;
        const RealMatrix grad = svd_backward(s, &gu, nullptr, nullptr, &stats);
        EXPECT_GT(stats.f_clamped, 0);
        EXPECT_TRUE(grad.is_finite());
    }
    {
        const RealMatrix a = matrix_with_singular_values(rng, 4, 4, {1.0, 0.5, 0.1, 1e-14});
        const SvdResult s = svd_thin(a);
        const RealMatrix gu = gaussian_matrix(rng, 4, 4);
        ClampStats stats;
        const RealMatrix grad = svd_backward(s, &gu, nullptr, nullptr, &stats);
        EXPECT_GT(stats.sigma_dropped, 0);
        EXPECT_TRUE(grad.is_finite());
    }
}
