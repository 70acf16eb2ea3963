#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <string>

#include "ndmd/dmdcore.hpp"
#include "ndmd/synthgen.hpp"
#include "oracles.hpp"

using namespace ndmd;
using testutil::gaussian_matrix;

namespace {

RealMatrix spiral_matrix() {
    RealMatrix a(2, 2);
    a(0, 0) = 0.9;
    a(0, 1) = -0.5;
    a(1, 0) = 0.4;
    a(1, 1) = 0.9;
    return a;
}

RealMatrix unit_e1(int k) {
    RealMatrix v(k, 1);
    v(0, 0) = 1.0;
    return v;
}

std::string temp_path(const std::string& name) {
    return testing::TempDir() + name;
}

}  // namespace

TEST(Propagate, SatisfiesRecursionExactly) {
    Rng rng(81);
    LatentSystem sys;
    sys.a = scale(gaussian_matrix(rng, 3, 3), 0.3);
    sys.psi0 = gaussian_matrix(rng, 3, 1);
    sys.t_len = 40;
    const RealMatrix s = propagate_linear(sys);
    ASSERT_EQ(s.cols, 40);
    for (int t = 0; t + 1 < 40; ++t) {
        const RealMatrix step = matmul(sys.a, RealMatrix::col_vector(col_of(s, t)));
        for (int i = 0; i < 3; ++i) EXPECT_NEAR(s(i, t + 1), step(i, 0), 1e-12);
    }
}

TEST(Propagate, IdentityDynamicsHoldConstant) {
    LatentSystem sys;
    sys.a = RealMatrix::identity(2);
    sys.psi0 = unit_e1(2);
    sys.psi0(1, 0) = -3.0;
    sys.t_len = 12;
    const RealMatrix s = propagate_linear(sys);
    for (int t = 0; t < 12; ++t) {
        EXPECT_DOUBLE_EQ(s(0, t), 1.0);
        EXPECT_DOUBLE_EQ(s(1, t), -3.0);
    }
}

TEST(Propagate, InputMatrixInjectsControl) {
    LatentSystem sys;
    sys.a = RealMatrix(2, 2);  // zero dynamics
    sys.b = unit_e1(2);
    sys.psi0 = RealMatrix(2, 1);
    sys.t_len = 6;
    RealMatrix xi(1, 5);
    for (int t = 0; t < 5; ++t) xi(0, t) = double(t) + 0.5;
    const RealMatrix s = propagate_linear(sys, &xi);
    for (int t = 1; t < 6; ++t) {
        EXPECT_DOUBLE_EQ(s(0, t), xi(0, t - 1));
        EXPECT_DOUBLE_EQ(s(1, t), 0.0);
    }
    EXPECT_THROW(propagate_linear(sys, nullptr), contract_violation);
}

TEST(Propagate, SpiralNormGrowsAtEigenvalueModulus) {
    LatentSystem sys;
    sys.a = spiral_matrix();
    sys.psi0 = unit_e1(2);
    sys.t_len = 101;
    const RealMatrix s = propagate_linear(sys);
    double n0 = 0.0, n100 = 0.0;
    for (int i = 0; i < 2; ++i) {
        n0 += s(i, 0) * s(i, 0);
        n100 += s(i, 100) * s(i, 100);
    }
    // |lambda| = sqrt(1.01), so the squared norm grows like 1.01^t with a
    // bounded oscillation factor
    const double growth = std::log(n100 / n0) / 100.0;
    EXPECT_NEAR(growth, std::log(1.01), 0.01);
}

TEST(GpLift, DeterministicUnderSeedAndSensitiveToIt) {
    Rng rng(82);
    const RealMatrix latent = gaussian_matrix(rng, 2, 30);
    GpLiftSpec spec;
    spec.out_dim = 5;
    spec.seed = 777;
    const RealMatrix a = gp_lift(latent, spec);
    const RealMatrix b = gp_lift(latent, spec);
    EXPECT_DOUBLE_EQ(frobenius_norm(sub(a, b)), 0.0);
    spec.seed = 778;
    const RealMatrix c = gp_lift(latent, spec);
    EXPECT_GT(frobenius_norm(sub(a, c)), 1e-6);
}

TEST(GpLift, IdenticalLatentPointsGiveNearIdenticalOutputs) {
    RealMatrix latent(2, 8);
    Rng rng(83);
    for (int t = 0; t < 8; t += 2) {
        const double u = rng.normal(), v = rng.normal();
        latent(0, t) = u;
        latent(1, t) = v;
        latent(0, t + 1) = u;  // duplicate every point
        latent(1, t + 1) = v;
    }
    GpLiftSpec spec;
    spec.out_dim = 3;
    spec.seed = 9;
    const RealMatrix out = gp_lift(latent, spec);
    for (int t = 0; t < 8; t += 2)
        for (int m = 0; m < 3; ++m) EXPECT_NEAR(out(m, t), out(m, t + 1), 1e-3);
}

TEST(GpLift, SampleCovarianceMatchesKernel) {
    // two fixed latent points; across seeds the outputs are a bivariate
    // normal whose covariance is the kernel Gram matrix
    RealMatrix latent(1, 2);
    latent(0, 0) = 0.0;
    latent(0, 1) = 1.2;
    GpLiftSpec spec;
    spec.out_dim = 1;
    spec.standardize_inputs = false;
    const double expected_cov = std::exp(-1.2 * 1.2 / 2.0);

    const int draws = 10000;
    double s00 = 0.0, s11 = 0.0, s01 = 0.0;
    for (int i = 0; i < draws; ++i) {
        spec.seed = std::uint64_t(i);
        const RealMatrix out = gp_lift(latent, spec);
        s00 += out(0, 0) * out(0, 0);
        s11 += out(0, 1) * out(0, 1);
        s01 += out(0, 0) * out(0, 1);
    }
    EXPECT_NEAR(s00 / draws, 1.0, 0.05);
    EXPECT_NEAR(s11 / draws, 1.0, 0.05);
    EXPECT_NEAR(s01 / draws, expected_cov, 0.05);
}

TEST(GpLift, VanishingVarianceGivesVanishingOutput) {
    Rng rng(84);
    const RealMatrix latent = gaussian_matrix(rng, 2, 10);
    GpLiftSpec spec;
    spec.out_dim = 4;
    spec.variance = 1e-20;
    spec.seed = 3;
    EXPECT_LT(max_abs(gp_lift(latent, spec)), 1e-8);
}

TEST(ControlSeries, MomentsMatchStandardNormal) {
    const long t_len = 100000;
    const RealMatrix xi = gen_control_series(1, t_len, 55);
    double mean = 0.0;
    for (double v : xi.data) mean += v;
    mean /= double(t_len);
    double var = 0.0;
    for (double v : xi.data) var += (v - mean) * (v - mean);
    var /= double(t_len);
    EXPECT_LT(std::abs(mean), 0.02);
    EXPECT_NEAR(var, 1.0, 0.02);

    const RealMatrix again = gen_control_series(1, t_len, 55);
    EXPECT_DOUBLE_EQ(frobenius_norm(sub(xi, again)), 0.0);
}

TEST(Normalization, RoundTripsAndStandardizesTrainSplit) {
    Rng rng(85);
    RealMatrix series = gaussian_matrix(rng, 3, 100);
    for (int t = 0; t < 100; ++t) {
        series(0, t) = series(0, t) * 4.0 + 10.0;
        series(2, t) = 7.0;  // constant dimension
    }
    const Normalization n = Normalization::fit(series, 0, 70);
    const RealMatrix z = n.apply(series);
    const RealMatrix back = n.invert(z);
    EXPECT_LT(frobenius_norm(sub(back, series)), 1e-10);

    double mean = 0.0, var = 0.0;
    for (int t = 0; t < 70; ++t) mean += z(0, t);
    mean /= 70.0;
    for (int t = 0; t < 70; ++t) var += (z(0, t) - mean) * (z(0, t) - mean);
    var /= 70.0;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-12);
    EXPECT_TRUE(z.is_finite());
    EXPECT_DOUBLE_EQ(z(2, 10), 0.0);  // constant dim maps to zero, scale 1

    const Normalization n2 = Normalization::from_json(n.to_json());
    EXPECT_EQ(n2.mean, n.mean);
    EXPECT_EQ(n2.stdev, n.stdev);
}

TEST(SeriesCsv, RoundTripIsBitExact) {
    Rng rng(86);
    RealMatrix series = gaussian_matrix(rng, 4, 25);
    series(0, 0) = 1e-300;
    series(1, 1) = -3.0e200;
    series(2, 2) = 0.1;  // not exactly representable, stress the formatter
    series(3, 3) = -0.0;
    const std::string path = temp_path("series_roundtrip.csv");
    write_series_csv(series, path);
    const RealMatrix back = read_series_csv(path);
    ASSERT_TRUE(back.same_shape(series));
    for (std::size_t i = 0; i < series.data.size(); ++i)
        EXPECT_EQ(series.data[i], back.data[i]);
    std::remove(path.c_str());
}

TEST(SeriesCsv, RejectsMalformedFiles) {
    const std::string empty = temp_path("empty.csv");
    { std::ofstream(empty.c_str()); }
    EXPECT_THROW(read_series_csv(empty), io_error);

    const std::string header_only = temp_path("header_only.csv");
    {
        std::ofstream out(header_only.c_str());
        out << "dim,t1,t2\n";
    }
    EXPECT_THROW(read_series_csv(header_only), io_error);

    const std::string ragged = temp_path("ragged.csv");
    {
        std::ofstream out(ragged.c_str());
        out << "dim,t1,t2\nx1,1.0\n";
    }
    EXPECT_THROW(read_series_csv(ragged), io_error);

    const std::string garbled = temp_path("garbled.csv");
    {
        std::ofstream out(garbled.c_str());
        out << "dim,t1\nx1,notanumber\n";
    }
    EXPECT_THROW(read_series_csv(garbled), io_error);

    EXPECT_THROW(read_series_csv(temp_path("missing.csv")), io_error);
    std::remove(empty.c_str());
    std::remove(header_only.c_str());
    std::remove(ragged.c_str());
    std::remove(garbled.c_str());
}

TEST(Manifest, RoundTripsThroughJson) {
    DatasetManifest m;
    m.name = "spiral10";
    m.seed = 42;
    m.t_len = 80;
    m.latent_dim = 2;
    m.obs_dim = 10;
    m.control_dim = 0;
    m.train_len = 70;
    m.val_len = 10;
    m.test_len = 0;
    m.true_eigenvalues = {complexd(0.9, 0.4472135954999579), complexd(0.9, -0.4472135954999579)};
    m.series_file = "series.csv";
    m.control_file = "";
    const std::string path = temp_path("manifest.json");
    write_manifest(m, path);
    const DatasetManifest r = read_manifest(path);
    EXPECT_EQ(r.name, m.name);
    EXPECT_EQ(r.seed, m.seed);
    EXPECT_EQ(r.t_len, m.t_len);
    EXPECT_EQ(r.train_len, m.train_len);
    ASSERT_EQ(r.true_eigenvalues.size(), m.true_eigenvalues.size());
    for (std::size_t i = 0; i < m.true_eigenvalues.size(); ++i)
        EXPECT_EQ(r.true_eigenvalues[i], m.true_eigenvalues[i]);
    std::remove(path.c_str());
}

TEST(Sanity, DmdOnTrueLatentRecoversSpectrum) {
    LatentSystem sys;
    sys.a = spiral_matrix();
    sys.psi0 = unit_e1(2);
    sys.t_len = 80;
    const RealMatrix latent = propagate_linear(sys);
    std::vector<long> taus;
    for (long t = 1; t <= 79; ++t) taus.push_back(t);
    const SpectralModel m = dmd_fit(build_pairs(latent, taus), RankSpec::fixed(2));
    const complexd truth(0.9, 0.4472135954999579);
    EXPECT_LT(std::abs(m.lambdas[0] - truth), 1e-8);
    EXPECT_LT(std::abs(m.lambdas[1] - std::conj(truth)), 1e-8);
}
