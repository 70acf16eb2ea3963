#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ndmd/eig.hpp"
#include "ndmd/errors.hpp"
#include "ndmd/matrix.hpp"
#include "ndmd/rng.hpp"

namespace ndmd {

/// Linear latent dynamics psi_{t+1} = A psi_t (+ B xi_t when B is present).
struct LatentSystem {
    RealMatrix a;     // K0 x K0
    RealMatrix b;     // K0 x D, empty when autonomous
    RealMatrix psi0;  // K0 x 1
    long t_len = 0;
};

/// One GP draw per output dimension over the latent trajectory, with an RBF
/// kernel k(u, v) = variance * exp(-|u - v|^2 / (2 lengthscale^2)).
struct GpLiftSpec {
    int out_dim = 1;
    double lengthscale = 1.0;
    double variance = 1.0;
    // Diagonal regularizer relative to the kernel variance, so shrinking
    // the signal shrinks the noise floor with it.
    double jitter = 1e-8;
    std::uint64_t seed = 0;
    // Standardize each latent dimension before kernel evaluation so the
    // lengthscale means the same thing across systems.
    bool standardize_inputs = true;
};

/// Roll the latent recursion forward exactly. xi must supply at least
/// t_len - 1 columns when the system has an input matrix.
inline RealMatrix propagate_linear(const LatentSystem& sys, const RealMatrix* xi = nullptr) {
    const int k = sys.a.rows;
    require(sys.a.cols == k, "propagate_linear: transition matrix must be square");
    require(sys.psi0.rows == k && sys.psi0.cols == 1, "propagate_linear: bad initial state");
    require(sys.t_len >= 1, "propagate_linear: need at least one timestep");
    const bool forced = !sys.b.empty();
    if (forced) {
        require(sys.b.rows == k, "propagate_linear: input matrix row mismatch");
        require(xi != nullptr && xi->rows == sys.b.cols && xi->cols >= sys.t_len - 1,
                "propagate_linear: exogenous series missing or too short");
    }
    RealMatrix out(k, int(sys.t_len));
    RealMatrix x = sys.psi0;
    for (long t = 0; t < sys.t_len; ++t) {
        for (int i = 0; i < k; ++i) out(i, int(t)) = x(i, 0);
        if (t + 1 < sys.t_len) {
            RealMatrix nx = matmul(sys.a, x);
            if (forced)
                for (int i = 0; i < k; ++i)
                    for (int d = 0; d < sys.b.cols; ++d) nx(i, 0) += sys.b(i, d) * (*xi)(d, int(t));
            x = nx;
        }
    }
    return out;
}

namespace detail {

/// In-place lower Cholesky. Returns false on a non-positive pivot.
inline bool cholesky_lower(RealMatrix& a) {
    const int n = a.rows;
    for (int j = 0; j < n; ++j) {
        double d = a(j, j);
        for (int k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
        if (!(d > 0.0)) return false;
        const double l = std::sqrt(d);
        a(j, j) = l;
        for (int i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (int k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
            a(i, j) = s / l;
        }
        for (int k = j + 1; k < n; ++k) a(j, k) = 0.0;
    }
    return true;
}

}  // namespace detail

/// Lift a K0 x T latent trajectory to out_dim x T observations by sampling
/// one zero-mean GP path per output dimension, all from the spec seed.
/// Cholesky failures escalate the jitter tenfold up to three retries.
inline RealMatrix gp_lift(const RealMatrix& latent, const GpLiftSpec& spec) {
    require(spec.out_dim >= 1, "gp_lift: output dimension must be positive");
    require(spec.lengthscale > 0.0 && spec.variance > 0.0, "gp_lift: kernel scales must be positive");
    require(latent.cols >= 1, "gp_lift: empty latent series");
    const int t_len = latent.cols;
    const int k0 = latent.rows;

    RealMatrix pts = latent;
    if (spec.standardize_inputs) {
        for (int i = 0; i < k0; ++i) {
            double mean = 0.0;
            for (int t = 0; t < t_len; ++t) mean += pts(i, t);
            mean /= t_len;
            double var = 0.0;
            for (int t = 0; t < t_len; ++t) var += (pts(i, t) - mean) * (pts(i, t) - mean);
            const double sd = std::sqrt(var / t_len);
            const double inv = sd > 1e-12 ? 1.0 / sd : 1.0;
            for (int t = 0; t < t_len; ++t) pts(i, t) = (pts(i, t) - mean) * inv;
        }
    }

    RealMatrix gram(t_len, t_len);
    const double inv2l2 = 1.0 / (2.0 * spec.lengthscale * spec.lengthscale);
    for (int s = 0; s < t_len; ++s)
        for (int t = s; t < t_len; ++t) {
            double d2 = 0.0;
            for (int i = 0; i < k0; ++i) {
                const double d = pts(i, s) - pts(i, t);
                d2 += d * d;
            }
            const double v = spec.variance * std::exp(-d2 * inv2l2);
            gram(s, t) = v;
            gram(t, s) = v;
        }

    RealMatrix chol;
    double jit = spec.jitter * spec.variance;
    bool ok = false;
    for (int attempt = 0; attempt <= 3; ++attempt) {
        chol = gram;
        for (int t = 0; t < t_len; ++t) chol(t, t) += jit;
        if (detail::cholesky_lower(chol)) {
            ok = true;
            break;
        }
        jit *= 10.0;
    }
    if (!ok) throw numeric_failure("gp_lift: kernel matrix is not positive definite after jitter escalation");

    Rng rng(spec.seed);
    RealMatrix out(spec.out_dim, t_len);
    std::vector<double> z(static_cast<std::size_t>(t_len));
    for (int m = 0; m < spec.out_dim; ++m) {
        for (double& v : z) v = rng.normal();
        for (int t = 0; t < t_len; ++t) {
            double acc = 0.0;
            for (int s = 0; s <= t; ++s) acc += chol(t, s) * z[std::size_t(s)];
            out(m, t) = acc;
        }
    }
    return out;
}

/// i.i.d. standard normal exogenous series, D x T.
inline RealMatrix gen_control_series(int d, long t_len, std::uint64_t seed) {
    require(d >= 1 && t_len >= 1, "gen_control_series: need positive dimensions");
    Rng rng(seed);
    RealMatrix out(d, int(t_len));
    for (double& v : out.data) v = rng.normal();
    return out;
}

/// Per-dimension affine standardization fitted on a column range (the
/// training split) and invertible for reporting in original units.
struct Normalization {
    std::vector<double> mean;
    std::vector<double> stdev;

    static Normalization fit(const RealMatrix& series, int col0, int col1) {
        require(0 <= col0 && col0 < col1 && col1 <= series.cols, "Normalization::fit: bad column range");
        Normalization n;
        n.mean.resize(std::size_t(series.rows));
        n.stdev.resize(std::size_t(series.rows));
        const double count = double(col1 - col0);
        for (int i = 0; i < series.rows; ++i) {
            double m = 0.0;
            for (int t = col0; t < col1; ++t) m += series(i, t);
            m /= count;
            double var = 0.0;
            for (int t = col0; t < col1; ++t) var += (series(i, t) - m) * (series(i, t) - m);
            double sd = std::sqrt(var / count);
            if (!(sd > 1e-12)) sd = 1.0;  // constant dimension, leave scale alone
            n.mean[std::size_t(i)] = m;
            n.stdev[std::size_t(i)] = sd;
        }
        return n;
    }

    RealMatrix apply(const RealMatrix& series) const {
        require(std::size_t(series.rows) == mean.size(), "Normalization::apply: dimension mismatch");
        RealMatrix out = series;
        for (int i = 0; i < series.rows; ++i)
            for (int t = 0; t < series.cols; ++t)
                out(i, t) = (series(i, t) - mean[std::size_t(i)]) / stdev[std::size_t(i)];
        return out;
    }

    RealMatrix invert(const RealMatrix& series) const {
        require(std::size_t(series.rows) == mean.size(), "Normalization::invert: dimension mismatch");
        RealMatrix out = series;
        for (int i = 0; i < series.rows; ++i)
            for (int t = 0; t < series.cols; ++t)
                out(i, t) = series(i, t) * stdev[std::size_t(i)] + mean[std::size_t(i)];
        return out;
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"mean", mean}, {"stdev", stdev}};
    }
    static Normalization from_json(const nlohmann::json& j) {
        Normalization n;
        n.mean = j.at("mean").get<std::vector<double>>();
        n.stdev = j.at("stdev").get<std::vector<double>>();
        require(n.mean.size() == n.stdev.size(), "Normalization: corrupt stats");
        return n;
    }
};

namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

/// Write a series as CSV with timesteps as columns: a header `dim,t1,...,tT`
/// and one row `<prefix><i>,v,...` per dimension. %.17g keeps doubles exact.
inline void write_series_csv(const RealMatrix& series, const std::string& path,
                             const std::string& prefix = "x") {
    std::ofstream out(path);
    if (!out) throw io_error("write_series_csv: cannot open " + path);
    out << "dim";
    for (int t = 1; t <= series.cols; ++t) out << ",t" << t;
    out << "\n";
    for (int i = 0; i < series.rows; ++i) {
        out << prefix << (i + 1);
        for (int t = 0; t < series.cols; ++t) out << ',' << detail::format_double(series(i, t));
        out << "\n";
    }
    if (!out) throw io_error("write_series_csv: write failed for " + path);
}

/// Read a series written by write_series_csv. Rejects empty files,
/// header-only files, and ragged rows.
inline RealMatrix read_series_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("read_series_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw io_error("read_series_csv: empty file " + path);

    std::size_t t_len = 0;
    for (char c : line)
        if (c == ',') ++t_len;
    if (t_len == 0) throw io_error("read_series_csv: header has no timestep columns in " + path);

    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        row.reserve(t_len);
        std::stringstream ss(line);
        std::string cell;
        if (!std::getline(ss, cell, ',')) throw io_error("read_series_csv: bad row in " + path);
        while (std::getline(ss, cell, ',')) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(cell, &used);
            } catch (const std::exception&) {
                throw io_error("read_series_csv: non-numeric cell in " + path);
            }
            if (used != cell.size()) throw io_error("read_series_csv: non-numeric cell in " + path);
            row.push_back(v);
        }
        if (row.size() != t_len) throw io_error("read_series_csv: ragged row in " + path);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw io_error("read_series_csv: no data rows in " + path);

    RealMatrix out(int(rows.size()), int(t_len));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t t = 0; t < t_len; ++t) out(int(i), int(t)) = rows[i][t];
    return out;
}

/// Everything needed to regenerate a dataset plus the ground truth that
/// evaluation compares against.
struct DatasetManifest {
    std::string name;
    std::uint64_t seed = 0;
    long t_len = 0;
    int latent_dim = 0;
    int obs_dim = 0;
    int control_dim = 0;
    long train_len = 0;
    long val_len = 0;
    long test_len = 0;
    std::vector<complexd> true_eigenvalues;
    std::string series_file;
    std::string control_file;  // empty when autonomous

    nlohmann::json to_json() const {
        nlohmann::json eigs = nlohmann::json::array();
        for (const complexd& l : true_eigenvalues)
            eigs.push_back(nlohmann::json{{"real", l.real()}, {"imag", l.imag()}});
        return nlohmann::json{
            {"name", name},           {"seed", seed},
            {"t_len", t_len},         {"latent_dim", latent_dim},
            {"obs_dim", obs_dim},     {"control_dim", control_dim},
            {"train_len", train_len}, {"val_len", val_len},
            {"test_len", test_len},   {"true_eigenvalues", eigs},
            {"series_file", series_file}, {"control_file", control_file}};
    }

    static DatasetManifest from_json(const nlohmann::json& j) {
        DatasetManifest m;
        m.name = j.at("name").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.t_len = j.at("t_len").get<long>();
        m.latent_dim = j.at("latent_dim").get<int>();
        m.obs_dim = j.at("obs_dim").get<int>();
        m.control_dim = j.at("control_dim").get<int>();
        m.train_len = j.at("train_len").get<long>();
        m.val_len = j.at("val_len").get<long>();
        m.test_len = j.at("test_len").get<long>();
        for (const auto& e : j.at("true_eigenvalues"))
            m.true_eigenvalues.emplace_back(e.at("real").get<double>(), e.at("imag").get<double>());
        m.series_file = j.at("series_file").get<std::string>();
        m.control_file = j.at("control_file").get<std::string>();
        return m;
    }
};

inline void write_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw io_error("write_manifest: cannot open " + path);
    out << m.to_json().dump(2) << "\n";
}

inline DatasetManifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("read_manifest: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw io_error(std::string("read_manifest: parse failure: ") + e.what());
    }
    return DatasetManifest::from_json(j);
}

/// Eigenvalues of a small real matrix, for recording ground truth.
inline std::vector<complexd> true_spectrum(const RealMatrix& a) {
    return eig(a).lambda;
}

}  // namespace ndmd
