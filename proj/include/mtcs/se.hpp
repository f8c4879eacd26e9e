#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "mtcs/estimator.hpp"

namespace mtcs {

// Effective noise variances of the two scalar channels tracked by state
// evolution. +infinity is the canonical initialization and maps to an
// absent channel downstream.
struct ScalarState {
  double tau_x = std::numeric_limits<double>::infinity();
  double tau_y = std::numeric_limits<double>::infinity();
};

struct SeParams {
  double rho_x = 0.0;
  double rho_y = 0.0;
  double sigma2_x = 0.0;
  double sigma2_y = 0.0;
};

struct McParams {
  std::int64_t samples = 100000;
  std::uint64_t seed = 0;
};

// One application of the recursion
//   tau'_o = sigma2_o + mmse_o(1/tau_x, 1/tau_y) / rho_o
// with infinite tau mapping to an absent channel. The sampler overload lets
// callers share one frozen sample set across many steps (common random
// numbers), which keeps the map deterministic and monotone.
ScalarState se_step(const SeParams& params, const ScalarState& state,
                    const MmseSampler& sampler);
ScalarState se_step(const SourceSpec& spec, const SeParams& params,
                    const ScalarState& state, const McParams& mc);

struct SeFixedPointResult {
  ScalarState state;
  int iterations = 0;
  bool converged = false;
  // trajectory[t] is the state after t+1 steps from (inf, inf).
  std::vector<ScalarState> trajectory;
};

// Iterates from (inf, inf) until the successive change in both coordinates
// drops below tol or max_iter is hit (non-convergence is flagged, the last
// state is still returned).
SeFixedPointResult se_fixed_point(const SeParams& params, const MmseSampler& sampler,
                                  double tol = 1e-8, int max_iter = 500);
SeFixedPointResult se_fixed_point(const SourceSpec& spec, const SeParams& params,
                                  const McParams& mc, double tol = 1e-8, int max_iter = 500);

// Average predicted mean-square error per terminal: (rho_x tau_x + rho_y tau_y) / 2.
double distortion(const SeParams& params, const ScalarState& state);

struct GridCell {
  double rho_x = 0.0;
  double rho_y = 0.0;
  double tau_x = 0.0;
  double tau_y = 0.0;
  double distortion = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Fixed points over the cartesian product of the two rate grids. All cells
// share one frozen sample set; cells are independent and run in parallel.
// Row-major over (rho_x index, rho_y index).
std::vector<GridCell> rate_distortion_grid(const SourceSpec& spec,
                                           const std::vector<double>& rho_grid_x,
                                           const std::vector<double>& rho_grid_y,
                                           double sigma2_x, double sigma2_y,
                                           const McParams& mc, double tol = 1e-8,
                                           int max_iter = 500);

struct FreshCheckRecord {
  int iteration = 0;
  double tau_se_x = 0.0;
  double tau_se_y = 0.0;
  double tau_emp_x = 0.0;
  double tau_emp_y = 0.0;
};

// Runs the Onsager-free iteration in which the measurement matrices are
// redrawn independently at every step, and reports the empirical effective
// noise variance of the denoiser inputs against the state-evolution
// prediction. The denoiser consumes the predicted taus.
std::vector<FreshCheckRecord> fresh_matrix_se_check(const SourceSpec& spec,
                                                    const SeParams& params, Eigen::Index n,
                                                    int iterations, std::uint64_t seed,
                                                    const McParams& mc);

}  // namespace mtcs
