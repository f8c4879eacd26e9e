#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "mtcs/estimator.hpp"
#include "mtcs/source.hpp"

namespace mtcs {

// Extra dedicated measurement rows appended per seeded column block.
inline constexpr int kSeedRowsPerBlock = 2;

// Row-normalized band matrix routing signal blocks to measurement blocks.
// Base rows use a uniform window of width 2w+1; each of the first
// seed_blocks columns additionally gets kSeedRowsPerBlock dedicated rows of
// weight seed_boost, which is what nucleates the recovery wave.
struct WeightMatrix {
  Eigen::MatrixXd entries;  // L_r x L_c
  int bandwidth = 0;
  int seed_blocks = 0;
  double seed_boost = 0.0;

  Eigen::Index rows() const { return entries.rows(); }
  Eigen::Index cols() const { return entries.cols(); }
};

WeightMatrix build_weight_matrix(int l_c, int w, int seed_blocks, double seed_boost);

// Accepts any entrywise-nonnegative matrix whose row sums lie in [1/2, 2].
void validate_weight_matrix(const WeightMatrix& weight);

// Identity weight, the single-block ensemble.
WeightMatrix single_block_weight();

struct CoupledEnsemble {
  WeightMatrix weight;
  Eigen::Index block_m = 0;  // M, rows per block
  Eigen::Index block_n = 0;  // N, columns per block
  Eigen::MatrixXd matrix;    // (L_r M) x (L_c N)
  double delta = 0.0;        // M / N
  std::uint64_t seed = 0;

  Eigen::Index m() const { return matrix.rows(); }
  Eigen::Index n() const { return matrix.cols(); }
};

// Block (r, c) is i.i.d. N(0, W(r,c) / M); zero-weight blocks are exactly
// zero. The (0, 0) block under the identity weight reproduces
// make_ensemble(M, N, seed) bit for bit.
CoupledEnsemble build_coupled_ensemble(const WeightMatrix& weight, Eigen::Index block_m,
                                       Eigen::Index block_n, std::uint64_t seed);

// Per-block state-evolution state: phi over measurement blocks, psi over
// signal blocks, one pair per terminal.
struct BlockState {
  Eigen::VectorXd phi_x, phi_y;  // L_r
  Eigen::VectorXd psi_x, psi_y;  // L_c
  int iteration = 0;
};

struct CoupledSeParams {
  double delta_x = 0.0;
  double delta_y = 0.0;
  double sigma2_x = 0.0;
  double sigma2_y = 0.0;
};

struct CoupledSeOptions {
  // All psi entries of both terminals below this threshold counts as
  // recovered and stops the run early.
  double recovery_threshold = 1e-4;
  // Early exit when the largest psi change falls below this (0 disables).
  double stall_tol = 0.0;
};

struct CoupledSeResult {
  std::vector<BlockState> states;  // states[t] is the state at time t, t = 0..T_used
  bool recovered = false;
  int recovered_at = -1;
};

// Runs the coupled recursion
//   phi_a(t)   = sigma2 + (1/delta) sum_i W(a,i) psi_i(t)
//   psi_i(t+1) = mmse(sum_b W(b,i)/phi_b^x(t), sum_b W(b,i)/phi_b^y(t))
// from psi(0) = inf. Infinite phi contributes zero precision; zero weights
// are skipped so no 0 * inf appears.
CoupledSeResult coupled_se_run(const WeightMatrix& weight, const CoupledSeParams& params,
                               int max_time, const MmseSampler& sampler,
                               const CoupledSeOptions& options = {});

// Damping weights of the non-uniform residual step:
//   q(r, c) = (1/phi_r) / sum_k W(k,c)/phi_k,
// zero where the denominator vanishes. Columns satisfy
// sum_k W(k,c) q(k,c) = 1 whenever some phi in the column support is finite.
Eigen::MatrixXd q_matrix(const Eigen::VectorXd& phi, const WeightMatrix& weight);

struct CoupledIterationRecord {
  Eigen::VectorXd block_mse_x, block_mse_y;  // L_c entries, NaN without truth
  double mse_x = 0.0;
  double mse_y = 0.0;
  double residual_var_x = 0.0;
  double residual_var_y = 0.0;
};

struct CoupledRunTrace {
  std::vector<CoupledIterationRecord> iterations;
  bool converged = false;
};

struct CoupledMampResult {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  CoupledRunTrace trace;
};

// Message passing on the coupled ensembles, consuming the per-block
// effective noise states of a coupled_se_run. Runtime iteration i uses
// se_states[i + 1] (the first state after initialization; index clamped at
// the end of the schedule), so the estimates it produces line up with
// psi(i + 2). With the identity weight this reduces bit for bit to
// mamp_run fed the matching scalar schedule.
CoupledMampResult coupled_mamp_run(const CoupledEnsemble& a, const CoupledEnsemble& b,
                                   const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                                   const SourceSpec& spec,
                                   const std::vector<BlockState>& se_states, int max_iter,
                                   double stop_tol, const Eigen::MatrixXd* truth = nullptr);

struct BoundaryPoint {
  double delta_x = 0.0;
  double delta_y_boundary = 0.0;
  int converged_t = -1;  // recovery time of the final successful run
  bool anomaly = false;  // bracket failure at the grid edges
};

// For each delta_x, bisects delta_y on [lo, hi] for the smallest rate at
// which the coupled recursion recovers within max_time. Bracket failures
// are flagged, not silently resolved.
std::vector<BoundaryPoint> phase_boundary_search(const WeightMatrix& weight,
                                                 const std::vector<double>& delta_x_grid,
                                                 double delta_y_lo, double delta_y_hi,
                                                 double sigma2_x, double sigma2_y,
                                                 int max_time, const MmseSampler& sampler,
                                                 double recovery_threshold = 1e-4,
                                                 double bisect_tol = 0.005);

}  // namespace mtcs
