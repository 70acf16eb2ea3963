#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "ndmd/errors.hpp"

namespace ndmd {

using complexd = std::complex<double>;

/// Dense real matrix, double precision, row-major.
struct RealMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;  // rows*cols entries, row-major

    RealMatrix() = default;
    RealMatrix(int r, int c) : rows(r), cols(c), data(std::size_t(r) * std::size_t(c), 0.0) {
        require(r >= 0 && c >= 0, "RealMatrix: negative dimension");
    }

    static RealMatrix zeros(int r, int c) { return RealMatrix(r, c); }

    static RealMatrix identity(int n) {
        RealMatrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static RealMatrix from_rows(std::initializer_list<std::initializer_list<double>> rs) {
        int r = int(rs.size());
        int c = r > 0 ? int(rs.begin()->size()) : 0;
        RealMatrix m(r, c);
        int i = 0;
        for (const auto& row : rs) {
            require(int(row.size()) == c, "from_rows: ragged rows");
            int j = 0;
            for (double v : row) m(i, j++) = v;
            ++i;
        }
        m.check_finite("from_rows");
        return m;
    }

    /// Column vector from a std::vector.
    static RealMatrix col_vector(const std::vector<double>& v) {
        RealMatrix m(int(v.size()), 1);
        m.data = v;
        m.check_finite("col_vector");
        return m;
    }

    double& operator()(int i, int j) { return data[std::size_t(i) * cols + j]; }
    double operator()(int i, int j) const { return data[std::size_t(i) * cols + j]; }

    bool empty() const { return rows == 0 || cols == 0; }
    std::size_t size() const { return data.size(); }
    bool same_shape(const RealMatrix& o) const { return rows == o.rows && cols == o.cols; }

    bool is_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    /// Entry-finiteness is an invariant at system boundaries; internal
    /// arithmetic calls this only where the contract demands it.
    void check_finite(const std::string& where) const {
        if (!is_finite()) throw contract_violation(where + ": non-finite entry");
    }
};

/// Dense complex matrix, double precision, row-major.
struct ComplexMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<complexd> data;

    ComplexMatrix() = default;
    ComplexMatrix(int r, int c) : rows(r), cols(c), data(std::size_t(r) * std::size_t(c)) {
        require(r >= 0 && c >= 0, "ComplexMatrix: negative dimension");
    }

    static ComplexMatrix zeros(int r, int c) { return ComplexMatrix(r, c); }

    static ComplexMatrix identity(int n) {
        ComplexMatrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static ComplexMatrix col_vector(const std::vector<complexd>& v) {
        ComplexMatrix m(int(v.size()), 1);
        m.data = v;
        return m;
    }

    complexd& operator()(int i, int j) { return data[std::size_t(i) * cols + j]; }
    complexd operator()(int i, int j) const { return data[std::size_t(i) * cols + j]; }

    bool empty() const { return rows == 0 || cols == 0; }
    bool same_shape(const ComplexMatrix& o) const { return rows == o.rows && cols == o.cols; }

    bool is_finite() const {
        for (const complexd& v : data)
            if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
        return true;
    }

    std::vector<complexd> col(int j) const {
        std::vector<complexd> out(rows);
        for (int i = 0; i < rows; ++i) out[i] = (*this)(i, j);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Real arithmetic
// ---------------------------------------------------------------------------

inline RealMatrix add(const RealMatrix& a, const RealMatrix& b) {
    require(a.same_shape(b), "add: shape mismatch");
    RealMatrix c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
    return c;
}

inline RealMatrix sub(const RealMatrix& a, const RealMatrix& b) {
    require(a.same_shape(b), "sub: shape mismatch");
    RealMatrix c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] -= b.data[i];
    return c;
}

inline RealMatrix scale(const RealMatrix& a, double s) {
    RealMatrix c = a;
    for (double& v : c.data) v *= s;
    return c;
}

inline RealMatrix hadamard(const RealMatrix& a, const RealMatrix& b) {
    require(a.same_shape(b), "hadamard: shape mismatch");
    RealMatrix c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] *= b.data[i];
    return c;
}

inline RealMatrix matmul(const RealMatrix& a, const RealMatrix& b) {
    require(a.cols == b.rows, "matmul: inner dimension mismatch");
    RealMatrix c(a.rows, b.cols);
    const int k = a.cols, n = b.cols;
    for (int i = 0; i < a.rows; ++i) {
        const double* ai = &a.data[std::size_t(i) * k];
        double* ci = &c.data[std::size_t(i) * n];
        for (int l = 0; l < k; ++l) {
            const double av = ai[l];
            const double* bl = &b.data[std::size_t(l) * n];
            for (int j = 0; j < n; ++j) ci[j] += av * bl[j];
        }
    }
    return c;
}

inline RealMatrix transpose(const RealMatrix& a) {
    RealMatrix t(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

inline double frobenius_norm(const RealMatrix& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return std::sqrt(s);
}

inline double max_abs(const RealMatrix& a) {
    double m = 0.0;
    for (double v : a.data) m = std::max(m, std::abs(v));
    return m;
}

inline std::vector<double> col_of(const RealMatrix& a, int j) {
    std::vector<double> v(a.rows);
    for (int i = 0; i < a.rows; ++i) v[i] = a(i, j);
    return v;
}

inline void set_col(RealMatrix& a, int j, const std::vector<double>& v) {
    require(int(v.size()) == a.rows, "set_col: length mismatch");
    for (int i = 0; i < a.rows; ++i) a(i, j) = v[i];
}

/// B = A[:, idx]. Repeated indices are allowed.
inline RealMatrix gather_cols(const RealMatrix& a, const std::vector<int>& idx) {
    RealMatrix b(a.rows, int(idx.size()));
    for (int j = 0; j < b.cols; ++j) {
        require(idx[j] >= 0 && idx[j] < a.cols, "gather_cols: index out of range");
        for (int i = 0; i < a.rows; ++i) b(i, j) = a(i, idx[j]);
    }
    return b;
}

/// Stack [a; b] by rows.
inline RealMatrix vconcat(const RealMatrix& a, const RealMatrix& b) {
    require(a.cols == b.cols, "vconcat: column mismatch");
    RealMatrix c(a.rows + b.rows, a.cols);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) c(i, j) = a(i, j);
    for (int i = 0; i < b.rows; ++i)
        for (int j = 0; j < b.cols; ++j) c(a.rows + i, j) = b(i, j);
    return c;
}

/// Rows [r0, r1) of a.
inline RealMatrix row_slice(const RealMatrix& a, int r0, int r1) {
    require(0 <= r0 && r0 <= r1 && r1 <= a.rows, "row_slice: bad range");
    RealMatrix b(r1 - r0, a.cols);
    for (int i = r0; i < r1; ++i)
        for (int j = 0; j < a.cols; ++j) b(i - r0, j) = a(i, j);
    return b;
}

/// Columns [c0, c1) of a.
inline RealMatrix col_slice(const RealMatrix& a, int c0, int c1) {
    require(0 <= c0 && c0 <= c1 && c1 <= a.cols, "col_slice: bad range");
    RealMatrix b(a.rows, c1 - c0);
    for (int i = 0; i < a.rows; ++i)
        for (int j = c0; j < c1; ++j) b(i, j - c0) = a(i, j);
    return b;
}

/// Row-wise sum, m x n -> m x 1.
inline RealMatrix row_sum(const RealMatrix& a) {
    RealMatrix s(a.rows, 1);
    for (int i = 0; i < a.rows; ++i) {
        double acc = 0.0;
        for (int j = 0; j < a.cols; ++j) acc += a(i, j);
        s(i, 0) = acc;
    }
    return s;
}

/// B = A * diag(d), d given as the n-vector of column scales.
inline RealMatrix scale_cols(const RealMatrix& a, const std::vector<double>& d) {
    require(int(d.size()) == a.cols, "scale_cols: length mismatch");
    RealMatrix b = a;
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) b(i, j) *= d[j];
    return b;
}

// ---------------------------------------------------------------------------
// Complex arithmetic
// ---------------------------------------------------------------------------

inline ComplexMatrix promote(const RealMatrix& a) {
    ComplexMatrix c(a.rows, a.cols);
    for (std::size_t i = 0; i < a.data.size(); ++i) c.data[i] = a.data[i];
    return c;
}

inline RealMatrix real_part(const ComplexMatrix& a) {
    RealMatrix r(a.rows, a.cols);
    for (std::size_t i = 0; i < a.data.size(); ++i) r.data[i] = a.data[i].real();
    return r;
}

inline RealMatrix imag_part(const ComplexMatrix& a) {
    RealMatrix r(a.rows, a.cols);
    for (std::size_t i = 0; i < a.data.size(); ++i) r.data[i] = a.data[i].imag();
    return r;
}

inline ComplexMatrix cadd(const ComplexMatrix& a, const ComplexMatrix& b) {
    require(a.same_shape(b), "cadd: shape mismatch");
    ComplexMatrix c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
    return c;
}

inline ComplexMatrix csub(const ComplexMatrix& a, const ComplexMatrix& b) {
    require(a.same_shape(b), "csub: shape mismatch");
    ComplexMatrix c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] -= b.data[i];
    return c;
}

inline ComplexMatrix cscale(const ComplexMatrix& a, complexd s) {
    ComplexMatrix c = a;
    for (complexd& v : c.data) v *= s;
    return c;
}

inline ComplexMatrix cmatmul(const ComplexMatrix& a, const ComplexMatrix& b) {
    require(a.cols == b.rows, "cmatmul: inner dimension mismatch");
    ComplexMatrix c(a.rows, b.cols);
    const int k = a.cols, n = b.cols;
    for (int i = 0; i < a.rows; ++i) {
        const complexd* ai = &a.data[std::size_t(i) * k];
        complexd* ci = &c.data[std::size_t(i) * n];
        for (int l = 0; l < k; ++l) {
            const complexd av = ai[l];
            const complexd* bl = &b.data[std::size_t(l) * n];
            for (int j = 0; j < n; ++j) ci[j] += av * bl[j];
        }
    }
    return c;
}

inline ComplexMatrix conj_elem(const ComplexMatrix& a) {
    ComplexMatrix c = a;
    for (complexd& v : c.data) v = std::conj(v);
    return c;
}

inline ComplexMatrix ctranspose(const ComplexMatrix& a) {
    ComplexMatrix t(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

/// Conjugate transpose.
inline ComplexMatrix hermitian(const ComplexMatrix& a) {
    ComplexMatrix t(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) t(j, i) = std::conj(a(i, j));
    return t;
}

inline double cfrobenius_norm(const ComplexMatrix& a) {
    double s = 0.0;
    for (const complexd& v : a.data) s += std::norm(v);
    return std::sqrt(s);
}

/// Solve A X = B for square complex A by LU with partial pivoting.
inline ComplexMatrix csolve(const ComplexMatrix& a, const ComplexMatrix& b) {
    require(a.rows == a.cols, "csolve: A must be square");
    require(a.rows == b.rows, "csolve: shape mismatch");
    const int n = a.rows, m = b.cols;
    ComplexMatrix lu = a;
    ComplexMatrix x = b;
    std::vector<int> piv(n);
    for (int i = 0; i < n; ++i) piv[i] = i;

    for (int k = 0; k < n; ++k) {
        int p = k;
        double best = std::abs(lu(k, k));
        for (int i = k + 1; i < n; ++i) {
            double v = std::abs(lu(i, k));
            if (v > best) { best = v; p = i; }
        }
        if (best == 0.0) throw degenerate_input("csolve: singular matrix");
        if (p != k) {
            for (int j = 0; j < n; ++j) std::swap(lu(k, j), lu(p, j));
            for (int j = 0; j < m; ++j) std::swap(x(k, j), x(p, j));
        }
        const complexd pivot = lu(k, k);
        for (int i = k + 1; i < n; ++i) {
            const complexd f = lu(i, k) / pivot;
            lu(i, k) = f;
            if (f == complexd(0.0, 0.0)) continue;
            for (int j = k + 1; j < n; ++j) lu(i, j) -= f * lu(k, j);
            for (int j = 0; j < m; ++j) x(i, j) -= f * x(k, j);
        }
    }
    for (int k = n - 1; k >= 0; --k) {
        const complexd pivot = lu(k, k);
        for (int j = 0; j < m; ++j) {
            complexd s = x(k, j);
            for (int l = k + 1; l < n; ++l) s -= lu(k, l) * x(l, j);
            x(k, j) = s / pivot;
        }
    }
    return x;
}

inline ComplexMatrix cinverse(const ComplexMatrix& a) {
    return csolve(a, ComplexMatrix::identity(a.rows));
}

/// Integer power by binary exponentiation; deterministic evaluation order.
inline complexd cpow_int(complexd base, long exponent) {
    require(exponent >= 0, "cpow_int: negative exponent rejected");
    complexd acc = 1.0;
    long e = exponent;
    while (e > 0) {
        if (e & 1) acc *= base;
        base *= base;
        e >>= 1;
    }
    return acc;
}

/// Elementwise integer power of a diagonal spectrum. Non-negative
/// exponents only; backward extrapolation is rejected by contract.
inline std::vector<complexd> diag_power(const std::vector<complexd>& lambdas, long exponent) {
    std::vector<complexd> out(lambdas.size());
    for (std::size_t i = 0; i < lambdas.size(); ++i) out[i] = cpow_int(lambdas[i], exponent);
    return out;
}

}  // namespace ndmd
