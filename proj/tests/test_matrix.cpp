#include <gtest/gtest.h>

#include <complex>
#include <set>

#include "ndmd/matrix.hpp"
#include "ndmd/rng.hpp"
#include "oracles.hpp"

using namespace ndmd;
using testutil::gaussian_matrix;

TEST(Matrix, MatmulMatchesNaiveLoop) {
    Rng rng(11);
    const RealMatrix a = gaussian_matrix(rng, 7, 5);
    const RealMatrix b = gaussian_matrix(rng, 5, 9);
    const RealMatrix c = matmul(a, b);
    for (int i = 0; i < 7; ++i) {
        for (int j = 0; j < 9; ++j) {
            double s = 0.0;
            for (int k = 0; k < 5; ++k) s += a(i, k) * b(k, j);
            EXPECT_NEAR(c(i, j), s, 1e-13);
        }
    }
}

TEST(Matrix, ShapeContractsAreEnforced) {
    const RealMatrix a(3, 4), b(4, 3);
    EXPECT_THROW(add(a, b), contract_violation);
    EXPECT_THROW(matmul(a, a), contract_violation);
    EXPECT_THROW(vconcat(a, RealMatrix(2, 5)), contract_violation);
    EXPECT_THROW(RealMatrix::from_rows({{1.0, 2.0}, {3.0}}), contract_violation);
    const double inf = std::numeric_limits<double>::infinity();
    EXPECT_THROW(RealMatrix::from_rows({{1.0, inf}}), contract_violation);
}

TEST(Matrix, SlicingAndStackingPreservePositions) {
    RealMatrix a(5, 4);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j) a(i, j) = 100.0 * i + j;

    const RealMatrix rows = row_slice(a, 1, 3);
    EXPECT_EQ(rows.rows, 2);
    EXPECT_DOUBLE_EQ(rows(0, 0), 100.0);
    EXPECT_DOUBLE_EQ(rows(1, 3), 203.0);

    const RealMatrix cols = col_slice(a, 2, 4);
    EXPECT_EQ(cols.cols, 2);
    EXPECT_DOUBLE_EQ(cols(4, 0), 402.0);

    const RealMatrix g = gather_cols(a, {3, 0, 3});
    EXPECT_EQ(g.cols, 3);
    EXPECT_DOUBLE_EQ(g(2, 0), 203.0);
    EXPECT_DOUBLE_EQ(g(2, 1), 200.0);
    EXPECT_DOUBLE_EQ(g(2, 2), 203.0);

    const RealMatrix st = vconcat(rows, rows);
    EXPECT_EQ(st.rows, 4);
    EXPECT_DOUBLE_EQ(st(3, 1), 201.0);

    const RealMatrix t = transpose(a);
    EXPECT_DOUBLE_EQ(t(3, 4), 403.0);
}

TEST(Matrix, ComplexSolveRecoversKnownSolution) {
    Rng rng(7);
    const int n = 6;
    ComplexMatrix a(n, n);
    for (auto& v : a.data) v = complexd(rng.normal(), rng.normal());
    ComplexMatrix x(n, 2);
    for (auto& v : x.data) v = complexd(rng.normal(), rng.normal());
    const ComplexMatrix b = cmatmul(a, x);
    const ComplexMatrix got = csolve(a, b);
    EXPECT_LT(cfrobenius_norm(csub(got, x)), 1e-10 * cfrobenius_norm(x));

    const ComplexMatrix inv = cinverse(a);
    const ComplexMatrix eye = cmatmul(a, inv);
    EXPECT_LT(cfrobenius_norm(csub(eye, ComplexMatrix::identity(n))), 1e-10);
}

TEST(Matrix, ComplexSolveRejectsSingularSystem) {
    ComplexMatrix a(2, 2);
    a(0, 0) = complexd(1.0, 2.0);
    a(0, 1) = complexd(-3.0, 0.5);
    a(1, 0) = a(0, 0) * 2.0;  // row 1 is a multiple of row 0
    a(1, 1) = a(0, 1) * 2.0;
    EXPECT_THROW(csolve(a, ComplexMatrix::identity(2)), degenerate_input);
}

TEST(Matrix, DiagPowerMatchesRepeatedMultiplication) {
    const std::vector<complexd> lam = {complexd(0.9, 0.4), complexd(-0.3, 0.0),
                                       complexd(1.1, -0.2)};
    for (long e : {0L, 1L, 2L, 7L, 23L}) {
        const std::vector<complexd> p = diag_power(lam, e);
        for (std::size_t i = 0; i < lam.size(); ++i) {
            complexd ref = 1.0;
            for (long k = 0; k < e; ++k) ref *= lam[i];
            EXPECT_LT(std::abs(p[i] - ref), 1e-12 * std::max(1.0, std::abs(ref)));
        }
    }
    EXPECT_THROW(diag_power(lam, -1), contract_violation);
}

TEST(Rng, StreamsAreSeedDeterministic) {
    Rng a(123), b(123), c(124);
    bool any_diff = false;
    for (int i = 0; i < 100; ++i) {
        const double x = a.uniform01();
        EXPECT_DOUBLE_EQ(x, b.uniform01());
        if (x != c.uniform01()) any_diff = true;
        EXPECT_GE(x, 0.0);
        EXPECT_LT(x, 1.0);
    }
    EXPECT_TRUE(any_diff);
    EXPECT_NE(mix64(1, 2), mix64(2, 1));
    EXPECT_NE(mix64(1, 2), mix64(1, 3));
}

TEST(Rng, NormalDrawsHaveExpectedMoments) {
    Rng rng(2024);
    const int n = 20000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    EXPECT_NEAR(mean, 0.0, 0.03);
    EXPECT_NEAR(var, 1.0, 0.05);
}

TEST(Rng, SampleWithoutReplacementIsSortedAndDistinct) {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + rng.below(40);
        const int k = rng.below(n + 1);
        const std::vector<int> s = rng.sample_without_replacement(n, k);
        ASSERT_EQ(int(s.size()), k);
        std::set<int> seen;
        int prev = -1;
        for (int v : s) {
            EXPECT_GE(v, 0);
            EXPECT_LT(v, n);
            EXPECT_GT(v, prev);
            prev = v;
            seen.insert(v);
        }
        EXPECT_EQ(int(seen.size()), k);
    }
}

TEST(Rng, BelowCoversFullRangeUniformly) {
    Rng rng(99);
    std::vector<int> counts(7, 0);
    const int draws = 70000;
    for (int i = 0; i < draws; ++i) ++counts[rng.below(7)];
    for (int c : counts) EXPECT_NEAR(double(c), draws / 7.0, 5.0 * std::sqrt(draws / 7.0));
}
