#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mtcs/rng.hpp"

namespace mtcs {

// A linear mixture of sparse Gaussian components. Component i is zero with
// probability 1 - alpha_i and N(0, 1/alpha_i) otherwise, which normalizes
// every component to unit variance. The observed terminals are rows of
// mixing * z.
struct SourceSpec {
  Eigen::MatrixXd mixing;       // t x k
  Eigen::VectorXd alphas;       // k, entries in (0, 1]
  Eigen::Index terminals() const { return mixing.rows(); }
  Eigen::Index components() const { return mixing.cols(); }
};

// Largest component count accepted by the exact support enumeration paths.
inline constexpr int kMaxEnumerationComponents = 24;

// Throws std::invalid_argument when the spec is malformed: empty dimensions,
// alphas outside (0, 1], non-finite mixing entries, or an all-zero row.
void validate_spec(const SourceSpec& spec);

// t x n matrix of i.i.d. source draws. Column j is mixing * z_j.
Eigen::MatrixXd sample_source(const SourceSpec& spec, Eigen::Index n, std::uint64_t seed);

// Exact covariance of one draw: mixing * mixing^T.
Eigen::MatrixXd source_covariance(const SourceSpec& spec);

// Information dimension of the selected rows: the expected rank of the
// mixing submatrix restricted to the active components, averaged over the
// 2^k support patterns. Exact enumeration; requires k <= 24.
double rid(const SourceSpec& spec, const std::vector<int>& rows);

// d(rows_a | rows_b) = d(rows_a u rows_b) - d(rows_b). Nonnegative.
double rid_conditional(const SourceSpec& spec, const std::vector<int>& rows_a,
                       const std::vector<int>& rows_b);

// Numerical rank with threshold 1e-9 times the largest singular value.
Eigen::Index matrix_rank(const Eigen::MatrixXd& m);

}  // namespace mtcs
