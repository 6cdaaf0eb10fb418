#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "salbfgs/types.hpp"

namespace salbfgs {

// Forgetting weight mu >= 0. The equivalent exponential forgetting factor is
// derived, never set directly: mu = 1 keeps the full past (no forgetting),
// mu = 0 keeps only the newest batch.
struct ForgetWeight {
  double mu = 1.0;

  void validate() const {
    if (!(mu >= 0.0) || !std::isfinite(mu))
      throw config_error("mu must be finite and >= 0");
  }

  double lambda() const { return mu * mu / (1.0 + mu * mu); }
};

// Running normal-equation accumulators for least squares with batch-level
// forgetting: theta_t solves A_t theta = B_t.
struct ForgettingState {
  Eigen::MatrixXd A;
  Eigen::VectorXd B;
  std::int64_t t = 0;  // index of the newest absorbed batch
};

inline ForgettingState init_state(const Eigen::MatrixXd& X0,
                                  const Eigen::VectorXd& Y0) {
  if (X0.rows() < 1) throw dimension_error("design matrix has no rows");
  if (X0.rows() != Y0.rows())
    throw dimension_error("design and response row counts differ");
  ForgettingState state;
  state.A = X0.transpose() * X0;
  state.B = X0.transpose() * Y0;
  state.t = 0;
  return state;
}

// A <- (2 / (1 + mu^2)) (mu^2 A + X'X), and likewise for B. With mu = 1 the
// prefactor is 1 and the update is a plain sum, so the state matches exact
// pooled least squares over all batches.
inline void update_state(ForgettingState& state, const Eigen::MatrixXd& X,
                         const Eigen::VectorXd& Y, const ForgetWeight& weight) {
  weight.validate();
  if (X.rows() < 1) throw dimension_error("design matrix has no rows");
  if (X.rows() != Y.rows())
    throw dimension_error("design and response row counts differ");
  if (X.cols() != state.A.cols())
    throw dimension_error("design column count does not match state");
  const double mu2 = weight.mu * weight.mu;
  const double scale = 2.0 / (1.0 + mu2);
  state.A = scale * (mu2 * state.A + X.transpose() * X);
  state.B = scale * (mu2 * state.B + X.transpose() * Y);
  ++state.t;
}

struct RidgePolicy {
  bool enabled = false;
  double scale = 1e-8;  // jitter = scale * trace(A) / dim
};

// Solves A theta = B by LDLT. A numerically singular system raises
// singular_matrix_error unless the ridge fallback is enabled, in which case
// a trace-scaled jitter is added to the diagonal first.
inline Eigen::VectorXd solve_theta(const ForgettingState& state,
                                   const RidgePolicy& ridge = {}) {
  const auto dim = state.A.rows();
  if (dim == 0) throw dimension_error("empty state");

  auto attempt = [&](const Eigen::MatrixXd& A) -> Eigen::VectorXd {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    if (ldlt.info() != Eigen::Success)
      throw singular_matrix_error("LDLT factorization failed");
    // For a pivoted LDLT of an SPD matrix the diagonal pivot ratio is a
    // condition estimate; Eigen's rcond() can miss exact rank deficiency
    // because its solve handles zero pivots gracefully.
    const Eigen::VectorXd D = ldlt.vectorD();
    const double dmax = D.maxCoeff();
    const double dmin = D.minCoeff();
    if (!(dmax > 0.0) || !(dmin > 1e-12 * dmax))
      throw singular_matrix_error(
          "normal equations numerically singular (pivot ratio " +
          std::to_string(dmax > 0.0 ? dmin / dmax : 0.0) + ")");
    const double rc = ldlt.rcond();
    if (!(rc > 0.0) || 1.0 / rc > 1e12)
      throw singular_matrix_error(
          "normal equations numerically singular (condition estimate " +
          std::to_string(rc > 0.0 ? 1.0 / rc : std::numeric_limits<double>::infinity()) +
          ")");
    Eigen::VectorXd theta = ldlt.solve(state.B);
    if (!theta.allFinite())
      throw singular_matrix_error("solution is not finite");
    return theta;
  };

  if (!ridge.enabled) return attempt(state.A);
  try {
    return attempt(state.A);
  } catch (const singular_matrix_error&) {
    const double jitter =
        ridge.scale * state.A.trace() / static_cast<double>(dim);
    if (!(jitter > 0.0))
      throw;
    Eigen::MatrixXd regularized = state.A;
    regularized.diagonal().array() += jitter;
    return attempt(regularized);
  }
}

// Sum of squared residuals of theta over a sequence of (X, Y) batches.
inline double fit_error(
    const Eigen::VectorXd& theta,
    std::span<const std::pair<Eigen::MatrixXd, Eigen::VectorXd>> batches) {
  double total = 0.0;
  for (const auto& [X, Y] : batches) {
    if (X.cols() != theta.rows())
      throw dimension_error("design column count does not match theta");
    if (X.rows() != Y.rows())
      throw dimension_error("design and response row counts differ");
    total += (X * theta - Y).squaredNorm();
  }
  return total;
}

// Densifies a batch of sparse examples into an Eigen design matrix and
// response vector of the given dimension.
inline std::pair<Eigen::MatrixXd, Eigen::VectorXd> densify(const Batch& batch,
                                                           std::size_t dim) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(batch.examples.size()),
      static_cast<Eigen::Index>(dim));
  Eigen::VectorXd Y(static_cast<Eigen::Index>(batch.examples.size()));
  for (std::size_t r = 0; r < batch.examples.size(); ++r) {
    const Example& ex = batch.examples[r];
    for (const auto& [index, value] : ex.features.entries) {
      if (index >= dim)
        throw dimension_error("feature index " + std::to_string(index) +
                              " out of range for dimension " +
                              std::to_string(dim));
      X(static_cast<Eigen::Index>(r), index) = value;
    }
    Y(static_cast<Eigen::Index>(r)) = static_cast<double>(ex.label);
  }
  return {std::move(X), std::move(Y)};
}

}  // namespace salbfgs
