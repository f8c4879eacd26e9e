#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "mtcs/se.hpp"
#include "mtcs/source.hpp"

namespace mtcs {

// Dense i.i.d. N(0, 1/m) sensing matrix.
struct GaussianEnsemble {
  Eigen::MatrixXd matrix;
  double rate = 0.0;  // m / n
  std::uint64_t seed = 0;

  Eigen::Index m() const { return matrix.rows(); }
  Eigen::Index n() const { return matrix.cols(); }
};

GaussianEnsemble make_ensemble(Eigen::Index m, Eigen::Index n, std::uint64_t seed);

// signal -> matrix * signal + N(0, noise_var) measurement noise. The terminal
// index keeps the noise streams of the two terminals distinct under a shared
// seed.
Eigen::VectorXd measure_matrix(const Eigen::MatrixXd& matrix, const Eigen::VectorXd& signal,
                               double noise_var, std::uint64_t seed, int terminal);
Eigen::VectorXd measure(const GaussianEnsemble& ensemble, const Eigen::VectorXd& signal,
                        double noise_var, std::uint64_t seed, int terminal = 0);

// Effective noise variances fed to the denoiser at each iteration. Oracle
// mode consumes a precomputed state-evolution trajectory (clamped to its
// last entry when exhausted); empirical mode uses the residual energies
// ||r||^2 / m of the current iteration.
struct TauSchedule {
  enum class Mode { kOracle, kEmpirical };
  Mode mode = Mode::kOracle;
  std::vector<ScalarState> taus;

  static TauSchedule oracle(std::vector<ScalarState> taus);
  static TauSchedule empirical();
};

struct MampOptions {
  int max_iter = 100;
  double stop_tol = 1e-8;
};

struct IterationRecord {
  // Empirical mean-square errors of the estimates produced at this
  // iteration (NaN when no ground truth was supplied).
  double mse_x = 0.0;
  double mse_y = 0.0;
  // Residual energies ||r||^2 / m, the empirical effective noise estimates.
  double residual_var_x = 0.0;
  double residual_var_y = 0.0;
  // Effective noise variances the denoiser consumed (the attached
  // state-evolution predictions in oracle mode).
  double se_tau_x = 0.0;
  double se_tau_y = 0.0;
};

struct RunTrace {
  std::vector<IterationRecord> iterations;
  bool converged = false;
};

struct MampResult {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  RunTrace trace;
};

// Joint AMP over the two linearly mixed measurement channels. truth, when
// given, is the 2 x n source realization used only for the mse trace.
MampResult mamp_run(const GaussianEnsemble& a, const GaussianEnsemble& b,
                    const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                    const SourceSpec& spec, const TauSchedule& schedule,
                    const MampOptions& options, const Eigen::MatrixXd* truth = nullptr);

}  // namespace mtcs
