#include "mtcs/mamp.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "mtcs/blockops.hpp"
#include "mtcs/errors.hpp"
#include "mtcs/estimator.hpp"
#include "mtcs/rng.hpp"

namespace mtcs {

GaussianEnsemble make_ensemble(Eigen::Index m, Eigen::Index n, std::uint64_t seed) {
  if (m < 1 || n < 1) throw std::invalid_argument("ensemble needs m >= 1 and n >= 1");
  GaussianEnsemble out;
  out.matrix.resize(m, n);
  out.rate = static_cast<double>(m) / static_cast<double>(n);
  out.seed = seed;
  RandomStream stream(seed, StreamTag::kStreamEnsembleBlock, {0, 0});
  const double sd = std::sqrt(1.0 / static_cast<double>(m));
#pragma omp parallel for schedule(static)
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < m; ++i) {
      out.matrix(i, j) = sd * stream.gaussian_at(static_cast<std::uint64_t>(j * m + i));
    }
  }
  return out;
}

Eigen::VectorXd measure_matrix(const Eigen::MatrixXd& matrix, const Eigen::VectorXd& signal,
                               double noise_var, std::uint64_t seed, int terminal) {
  if (signal.size() != matrix.cols()) throw std::invalid_argument("signal length mismatch");
  if (!(noise_var >= 0.0) || !std::isfinite(noise_var)) {
    throw std::invalid_argument("noise variance must be nonnegative and finite");
  }
  Eigen::VectorXd out = matrix * signal;
  if (noise_var > 0.0) {
    RandomStream stream(seed, StreamTag::kStreamMeasureNoise,
                        {static_cast<std::uint64_t>(terminal)});
    const double sd = std::sqrt(noise_var);
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      out[i] += sd * stream.gaussian_at(static_cast<std::uint64_t>(i));
    }
  }
  return out;
}

Eigen::VectorXd measure(const GaussianEnsemble& ensemble, const Eigen::VectorXd& signal,
                        double noise_var, std::uint64_t seed, int terminal) {
  return measure_matrix(ensemble.matrix, signal, noise_var, seed, terminal);
}

TauSchedule TauSchedule::oracle(std::vector<ScalarState> taus) {
  TauSchedule out;
  out.mode = Mode::kOracle;
  out.taus = std::move(taus);
  return out;
}

TauSchedule TauSchedule::empirical() {
  TauSchedule out;
  out.mode = Mode::kEmpirical;
  return out;
}

namespace {

double row_mean_segment(const Eigen::MatrixXd& mat, Eigen::Index row, Eigen::Index start,
                        Eigen::Index len) {
  double acc = 0.0;
  for (Eigen::Index j = 0; j < len; ++j) acc += mat(row, start + j);
  return acc / static_cast<double>(len);
}

double mean_square(const Eigen::VectorXd& v) {
  return v.squaredNorm() / static_cast<double>(v.size());
}

}  // namespace

MampResult mamp_run(const GaussianEnsemble& a, const GaussianEnsemble& b,
                    const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                    const SourceSpec& spec, const TauSchedule& schedule,
                    const MampOptions& options, const Eigen::MatrixXd* truth) {
  if (spec.terminals() != 2) throw std::invalid_argument("mamp_run needs a two-terminal spec");
  if (a.n() != b.n()) throw std::invalid_argument("ensembles disagree on signal length");
  if (u.size() != a.m() || v.size() != b.m()) {
    throw std::invalid_argument("measurement lengths do not match the ensembles");
  }
  if (!u.allFinite() || !v.allFinite()) {
    throw std::invalid_argument("measurements must be finite");
  }
  if (schedule.mode == TauSchedule::Mode::kOracle && schedule.taus.empty()) {
    throw std::invalid_argument("oracle schedule needs at least one state");
  }
  if (options.max_iter < 1 || !(options.stop_tol > 0.0)) {
    throw std::invalid_argument("mamp options need max_iter >= 1 and stop_tol > 0");
  }
  if (truth != nullptr && (truth->rows() != 2 || truth->cols() != a.n())) {
    throw std::invalid_argument("truth must be 2 x n");
  }

  const Eigen::Index n = a.n(), mx = a.m(), my = b.m();
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(1, 1);

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd r_prev, s_prev;
  double jac_mean_x = 0.0, jac_mean_y = 0.0;

  MampResult result;
  double prev_mse_x = 0.0, prev_mse_y = 0.0;

  Eigen::VectorXd forward, back, r, s, g(n), h(n), x_old, y_old;
  Eigen::MatrixXd obs(2, n);

  for (int t = 0; t < options.max_iter; ++t) {
    blockops::block_matvec(a.matrix, mx, n, ones, x, forward);
    r = u - forward;
    if (t > 0) {
      const double coef = jac_mean_x / a.rate;
      r.segment(0, mx) += coef * r_prev.segment(0, mx);
    }
    blockops::block_matvec(b.matrix, my, n, ones, y, forward);
    s = v - forward;
    if (t > 0) {
      const double coef = jac_mean_y / b.rate;
      s.segment(0, my) += coef * s_prev.segment(0, my);
    }

    IterationRecord rec;
    rec.residual_var_x = r.squaredNorm() / static_cast<double>(mx);
    rec.residual_var_y = s.squaredNorm() / static_cast<double>(my);

    ScalarState tau;
    if (schedule.mode == TauSchedule::Mode::kOracle) {
      const std::size_t idx =
          std::min(static_cast<std::size_t>(t), schedule.taus.size() - 1);
      tau = schedule.taus[idx];
      rec.se_tau_x = tau.tau_x;
      rec.se_tau_y = tau.tau_y;
    } else {
      tau = {rec.residual_var_x, rec.residual_var_y};
      rec.se_tau_x = std::numeric_limits<double>::quiet_NaN();
      rec.se_tau_y = std::numeric_limits<double>::quiet_NaN();
    }

    blockops::block_tmatvec_scaled(a.matrix, mx, n, ones, ones, r, back);
    g = x + back;
    blockops::block_tmatvec_scaled(b.matrix, my, n, ones, ones, s, back);
    h = y + back;

    obs.row(0) = g.transpose();
    obs.row(1) = h.transpose();
    DenoiseResult dr =
        denoise(spec, NoiseModel::diagonal(Eigen::Vector2d(tau.tau_x, tau.tau_y)), obs);
    x_old = std::move(x);
    y_old = std::move(y);
    x = dr.estimates.row(0).transpose();
    y = dr.estimates.row(1).transpose();
    jac_mean_x = row_mean_segment(dr.jacobians, 0, 0, n);
    jac_mean_y = row_mean_segment(dr.jacobians, 1, 0, n);
    r_prev = r;
    s_prev = s;

    double change;
    if (truth != nullptr) {
      rec.mse_x = mean_square(x - truth->row(0).transpose());
      rec.mse_y = mean_square(y - truth->row(1).transpose());
      change = (t == 0) ? std::numeric_limits<double>::infinity()
                        : std::max(std::abs(rec.mse_x - prev_mse_x),
                                   std::abs(rec.mse_y - prev_mse_y));
      prev_mse_x = rec.mse_x;
      prev_mse_y = rec.mse_y;
      if (!std::isfinite(rec.mse_x) || !std::isfinite(rec.mse_y)) {
        throw NumericalError("mamp_run diverged at iteration " + std::to_string(t));
      }
    } else {
      rec.mse_x = std::numeric_limits<double>::quiet_NaN();
      rec.mse_y = std::numeric_limits<double>::quiet_NaN();
      change = (t == 0)
                   ? std::numeric_limits<double>::infinity()
                   : std::max(mean_square(x - x_old), mean_square(y - y_old));
      if (!x.allFinite() || !y.allFinite()) {
        throw NumericalError("mamp_run diverged at iteration " + std::to_string(t));
      }
    }

    result.trace.iterations.push_back(rec);
    if (change < options.stop_tol) {
      result.trace.converged = true;
      break;
    }
  }

  result.x = std::move(x);
  result.y = std::move(y);
  return result;
}

}  // namespace mtcs
