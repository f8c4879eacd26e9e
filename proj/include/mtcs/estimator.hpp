#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "mtcs/source.hpp"

namespace mtcs {

// Additive Gaussian observation noise on the terminals. An infinite diagonal
// entry marks that terminal's observation as absent: the posterior then
// marginalizes over it structurally instead of dividing by a huge variance.
// Rows and columns of absent terminals must be zero off the diagonal.
struct NoiseModel {
  Eigen::MatrixXd covariance;  // t x t, symmetric; +inf diagonal = absent

  static NoiseModel diagonal(const Eigen::VectorXd& taus);
};

struct PosteriorSummary {
  Eigen::VectorXd mean;                // t
  Eigen::MatrixXd covariance;          // t x t
  Eigen::VectorXd pattern_posteriors;  // 2^k, aligned with support bitmasks
};

struct DenoiseResult {
  Eigen::MatrixXd estimates;  // t x n
  Eigen::MatrixXd jacobians;  // t x n; d estimate_o / d observation_o
};

// Precomputes the per-support-pattern quantities (observation precision,
// posterior gain, posterior covariance, weight constants) for one (spec,
// noise) pair so that many observations can be evaluated cheaply. All
// evaluation methods are const and thread-safe. Weights are handled in the
// log domain with running-max rescaling, so extreme signal-to-noise ratios
// do not overflow. Singular observation covariances get a relative diagonal
// ridge before the factorization is declared hopeless.
class PosteriorEngine {
 public:
  PosteriorEngine(const SourceSpec& spec, const NoiseModel& noise);

  Eigen::Index terminals() const { return t_; }
  Eigen::Index observed_count() const { return static_cast<Eigen::Index>(observed_.size()); }
  const std::vector<int>& observed() const { return observed_; }

  // Posterior mean, variance diagonal and (for diagonal noise) the diagonal
  // of the observation jacobian, for a single observation. Entries of x at
  // absent terminals are ignored. Buffers hold terminals() doubles; jac may
  // be null. No allocation; safe to call concurrently.
  void moments_diag(const double* x, double* mean, double* var, double* jac) const;

  PosteriorSummary posterior(const Eigen::VectorXd& x) const;

  // Prior variance of each terminal (used when every channel is absent).
  const Eigen::VectorXd& prior_variance() const { return prior_var_; }

 private:
  SourceSpec spec_;
  Eigen::Index t_ = 0;
  int p_ = 0;                  // observed count
  std::vector<int> observed_;  // ascending terminal indices with finite noise
  bool diag_noise_ = true;
  std::vector<double> inv_tau_;  // per observed terminal, diagonal noise only

  int free_count_ = 0;
  std::vector<std::uint32_t> pattern_bits_;  // full support bitmask per pattern
  // Flattened per-pattern block: [weight constant][precision p*p]
  // [gain t*p][posterior variance diag t][posterior covariance t*t].
  std::vector<double> data_;
  Eigen::Index stride_ = 0;
  Eigen::VectorXd prior_var_;
  Eigen::MatrixXd prior_cov_;

  const double* pattern(Eigen::Index i) const { return data_.data() + i * stride_; }
};

// Full posterior for one observation.
PosteriorSummary posterior(const SourceSpec& spec, const NoiseModel& noise,
                           const Eigen::VectorXd& x);

// Diagonal of the jacobian of the posterior mean with respect to the
// observation, equal to posterior covariance times inverse noise covariance.
// Absent terminals contribute zeros.
Eigen::VectorXd jacobian_diag(const SourceSpec& spec, const NoiseModel& noise,
                              const Eigen::VectorXd& x);

// Column-wise posterior means and jacobian diagonals for a batch of
// observations. The parallel version splits columns across threads; results
// are identical for any thread count.
DenoiseResult denoise(const SourceSpec& spec, const NoiseModel& noise,
                      const Eigen::MatrixXd& observations);
DenoiseResult denoise_serial(const SourceSpec& spec, const NoiseModel& noise,
                             const Eigen::MatrixXd& observations);

// Channel precisions at or above this value are treated as exact
// observations up to a 1e-30 residual variance, which keeps the posterior
// covariance invertible for every support pattern.
inline constexpr double kMaxChannelPrecision = 1e30;

// Monte-Carlo estimates of mmse_o(s) = E Var(S_o | sqrt(s_1) S_1 + Z_1, ...)
// over a frozen sample set, so that repeated evaluations share their random
// numbers: equal inputs give bitwise equal outputs, and the map s -> mmse is
// deterministic. A precision of zero marks the channel as absent.
class MmseSampler {
 public:
  MmseSampler(const SourceSpec& spec, std::int64_t samples, std::uint64_t seed);

  Eigen::VectorXd mmse(const Eigen::VectorXd& precisions) const;
  Eigen::VectorXd mmse_serial(const Eigen::VectorXd& precisions) const;

  // Two-terminal convenience used by the state-evolution paths.
  std::pair<double, double> mmse2(double s_x, double s_y) const;

  const SourceSpec& spec() const { return spec_; }
  std::int64_t samples() const { return samples_; }
  std::uint64_t seed() const { return seed_; }

 private:
  Eigen::VectorXd mmse_impl(const Eigen::VectorXd& precisions, bool parallel) const;

  SourceSpec spec_;
  std::int64_t samples_;
  std::uint64_t seed_;
  Eigen::MatrixXd signals_;  // t x samples
  Eigen::MatrixXd noise_;    // t x samples, standard normal
};

// One-off evaluation for a two-terminal spec; builds a fresh sampler.
std::pair<double, double> scalar_channel_mmse(const SourceSpec& spec, double s_x, double s_y,
                                              std::int64_t samples, std::uint64_t seed);

}  // namespace mtcs
