#pragma once

#include <stdexcept>
#include <string>

namespace ndmd {

/// Caller violated a documented precondition (bad shape, bad argument).
struct contract_violation : std::invalid_argument {
    explicit contract_violation(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Input is numerically degenerate for the requested operation
/// (rank-deficient snapshots, all singular values below threshold, ...).
struct degenerate_input : std::runtime_error {
    explicit degenerate_input(const std::string& msg) : std::runtime_error(msg) {}
};

/// Eigendecomposition residual or eigenvector conditioning failed the
/// diagonalizability check.
struct non_diagonalizable : std::runtime_error {
    explicit non_diagonalizable(const std::string& msg) : std::runtime_error(msg) {}
};

/// An iterative kernel (QR iteration, Cholesky with jitter escalation)
/// did not converge.
struct numeric_failure : std::runtime_error {
    explicit numeric_failure(const std::string& msg) : std::runtime_error(msg) {}
};

/// Model kind exists in the literature but is outside this library.
struct unsupported_model : std::runtime_error {
    explicit unsupported_model(const std::string& msg) : std::runtime_error(msg) {}
};

/// File / format problems on dataset, config, or checkpoint IO.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw contract_violation(msg);
}

}  // namespace ndmd
