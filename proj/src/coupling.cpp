#include "mtcs/coupling.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "mtcs/blockops.hpp"
#include "mtcs/errors.hpp"
#include "mtcs/rng.hpp"

namespace mtcs {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double inv_or_zero(double phi) { return std::isinf(phi) ? 0.0 : 1.0 / phi; }

}  // namespace

WeightMatrix build_weight_matrix(int l_c, int w, int seed_blocks, double seed_boost) {
  if (w < 0 || l_c < 2 * w + 1) {
    throw std::invalid_argument("need l_c >= 2w + 1 and w >= 0");
  }
  if (seed_blocks < 0 || seed_blocks > l_c) {
    throw std::invalid_argument("seed_blocks must lie in [0, l_c]");
  }
  if (seed_blocks > 0 && !(seed_boost > 0.0)) {
    throw std::invalid_argument("seeded rows need seed_boost > 0");
  }
  WeightMatrix out;
  out.bandwidth = w;
  out.seed_blocks = seed_blocks;
  out.seed_boost = seed_boost;
  out.entries = Eigen::MatrixXd::Zero(l_c + kSeedRowsPerBlock * seed_blocks, l_c);
  const double band = 1.0 / static_cast<double>(2 * w + 1);
  for (int r = 0; r < l_c; ++r) {
    for (int c = std::max(0, r - w); c <= std::min(l_c - 1, r + w); ++c) {
      out.entries(r, c) = band;
    }
  }
  // each seeded column block gets its own dedicated measurement rows: a row
  // shared across several blocks dilutes its precision by the unrecovered
  // neighbors and fails to start the wave, a dedicated row contributes
  // delta/psi_j to block j alone (row scale cancels in noiseless SE)
  for (int j = 0; j < seed_blocks; ++j) {
    for (int q = 0; q < kSeedRowsPerBlock; ++q) {
      out.entries(l_c + kSeedRowsPerBlock * j + q, j) = seed_boost;
    }
  }
  validate_weight_matrix(out);
  return out;
}

void validate_weight_matrix(const WeightMatrix& weight) {
  const Eigen::MatrixXd& w = weight.entries;
  if (w.rows() < 1 || w.cols() < 1) throw std::invalid_argument("empty weight matrix");
  if (!w.allFinite() || (w.array() < 0.0).any()) {
    throw std::invalid_argument("weights must be finite and nonnegative");
  }
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    const double sum = w.row(r).sum();
    if (!(sum >= 0.5 && sum <= 2.0)) {
      throw std::invalid_argument("weight row " + std::to_string(r) +
                                  " sums to " + std::to_string(sum) +
                                  ", outside [1/2, 2]");
    }
  }
}

WeightMatrix single_block_weight() {
  WeightMatrix out;
  out.entries = Eigen::MatrixXd::Ones(1, 1);
  out.bandwidth = 0;
  out.seed_blocks = 0;
  out.seed_boost = 0.0;
  return out;
}

CoupledEnsemble build_coupled_ensemble(const WeightMatrix& weight, Eigen::Index block_m,
                                       Eigen::Index block_n, std::uint64_t seed) {
  validate_weight_matrix(weight);
  if (block_m < 1 || block_n < 1) throw std::invalid_argument("blocks need m >= 1 and n >= 1");
  const Eigen::Index lr = weight.rows(), lc = weight.cols();
  CoupledEnsemble out;
  out.weight = weight;
  out.block_m = block_m;
  out.block_n = block_n;
  out.delta = static_cast<double>(block_m) / static_cast<double>(block_n);
  out.seed = seed;
  out.matrix = Eigen::MatrixXd::Zero(lr * block_m, lc * block_n);
  for (Eigen::Index r = 0; r < lr; ++r) {
    for (Eigen::Index c = 0; c < lc; ++c) {
      if (weight.entries(r, c) == 0.0) continue;
      RandomStream stream(seed, StreamTag::kStreamEnsembleBlock,
                          {static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(c)});
      const double sd = std::sqrt(weight.entries(r, c) / static_cast<double>(block_m));
      auto block = out.matrix.block(r * block_m, c * block_n, block_m, block_n);
#pragma omp parallel for schedule(static)
      for (Eigen::Index j = 0; j < block_n; ++j) {
        for (Eigen::Index i = 0; i < block_m; ++i) {
          block(i, j) = sd * stream.gaussian_at(static_cast<std::uint64_t>(j * block_m + i));
        }
      }
    }
  }
  return out;
}

namespace {

void check_coupled_params(const CoupledSeParams& params) {
  if (!(params.delta_x > 0.0) || !std::isfinite(params.delta_x) ||
      !(params.delta_y > 0.0) || !std::isfinite(params.delta_y)) {
    throw std::invalid_argument("block rates must be positive and finite");
  }
  if (!(params.sigma2_x >= 0.0) || !std::isfinite(params.sigma2_x) ||
      !(params.sigma2_y >= 0.0) || !std::isfinite(params.sigma2_y)) {
    throw std::invalid_argument("noise variances must be nonnegative and finite");
  }
}

Eigen::VectorXd phi_from_psi(const Eigen::MatrixXd& w, const Eigen::VectorXd& psi,
                             double sigma2, double delta) {
  const Eigen::Index lr = w.rows(), lc = w.cols();
  Eigen::VectorXd phi(lr);
  for (Eigen::Index r = 0; r < lr; ++r) {
    double acc = 0.0;
    for (Eigen::Index c = 0; c < lc; ++c) {
      if (w(r, c) == 0.0) continue;
      acc += w(r, c) * psi[c];
    }
    phi[r] = sigma2 + acc / delta;
  }
  return phi;
}

Eigen::VectorXd column_precisions(const Eigen::MatrixXd& w, const Eigen::VectorXd& phi) {
  const Eigen::Index lr = w.rows(), lc = w.cols();
  Eigen::VectorXd s(lc);
  for (Eigen::Index c = 0; c < lc; ++c) {
    double acc = 0.0;
    for (Eigen::Index r = 0; r < lr; ++r) {
      if (w(r, c) == 0.0) continue;
      acc += w(r, c) * inv_or_zero(phi[r]);
    }
    s[c] = acc;
  }
  return s;
}

}  // namespace

CoupledSeResult coupled_se_run(const WeightMatrix& weight, const CoupledSeParams& params,
                               int max_time, const MmseSampler& sampler,
                               const CoupledSeOptions& options) {
  validate_weight_matrix(weight);
  check_coupled_params(params);
  if (max_time < 1) throw std::invalid_argument("coupled run needs max_time >= 1");
  if (sampler.spec().terminals() != 2) {
    throw std::invalid_argument("coupled run needs a two-terminal spec");
  }
  const Eigen::Index lc = weight.cols();
  const Eigen::MatrixXd& w = weight.entries;

  CoupledSeResult out;
  BlockState state;
  state.psi_x = Eigen::VectorXd::Constant(lc, kInf);
  state.psi_y = Eigen::VectorXd::Constant(lc, kInf);
  state.phi_x = phi_from_psi(w, state.psi_x, params.sigma2_x, params.delta_x);
  state.phi_y = phi_from_psi(w, state.psi_y, params.sigma2_y, params.delta_y);
  state.iteration = 0;
  out.states.push_back(state);

  for (int t = 0; t < max_time; ++t) {
    const Eigen::VectorXd s_x = column_precisions(w, state.phi_x);
    const Eigen::VectorXd s_y = column_precisions(w, state.phi_y);
    BlockState next;
    next.psi_x.resize(lc);
    next.psi_y.resize(lc);
    for (Eigen::Index c = 0; c < lc; ++c) {
      auto [m_x, m_y] = sampler.mmse2(s_x[c], s_y[c]);
      next.psi_x[c] = m_x;
      next.psi_y[c] = m_y;
    }
    next.phi_x = phi_from_psi(w, next.psi_x, params.sigma2_x, params.delta_x);
    next.phi_y = phi_from_psi(w, next.psi_y, params.sigma2_y, params.delta_y);
    next.iteration = t + 1;

    double change = 0.0;
    for (Eigen::Index c = 0; c < lc; ++c) {
      const double dx = std::isinf(state.psi_x[c]) ? kInf
                                                   : std::abs(next.psi_x[c] - state.psi_x[c]);
      const double dy = std::isinf(state.psi_y[c]) ? kInf
                                                   : std::abs(next.psi_y[c] - state.psi_y[c]);
      change = std::max(change, std::max(dx, dy));
    }

    out.states.push_back(next);
    state = next;

    const bool below = (state.psi_x.array() < options.recovery_threshold).all() &&
                       (state.psi_y.array() < options.recovery_threshold).all();
    if (below) {
      out.recovered = true;
      out.recovered_at = t + 1;
      break;
    }
    if (options.stall_tol > 0.0 && change <= options.stall_tol) break;
  }
  return out;
}

Eigen::MatrixXd q_matrix(const Eigen::VectorXd& phi, const WeightMatrix& weight) {
  const Eigen::Index lr = weight.rows(), lc = weight.cols();
  if (phi.size() != lr) throw std::invalid_argument("phi length must match weight rows");
  const Eigen::VectorXd s = column_precisions(weight.entries, phi);
  Eigen::MatrixXd q(lr, lc);
  for (Eigen::Index c = 0; c < lc; ++c) {
    for (Eigen::Index r = 0; r < lr; ++r) {
      q(r, c) = (s[c] == 0.0) ? 0.0 : inv_or_zero(phi[r]) / s[c];
    }
  }
  return q;
}

CoupledMampResult coupled_mamp_run(const CoupledEnsemble& a, const CoupledEnsemble& b,
                                   const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                                   const SourceSpec& spec,
                                   const std::vector<BlockState>& se_states, int max_iter,
                                   double stop_tol, const Eigen::MatrixXd* truth) {
  if (spec.terminals() != 2) throw std::invalid_argument("coupled run needs two terminals");
  if (a.weight.entries != b.weight.entries) {
    throw std::invalid_argument("both terminals must share the weight matrix");
  }
  if (a.block_n != b.block_n) throw std::invalid_argument("signal block sizes disagree");
  if (u.size() != a.m() || v.size() != b.m()) {
    throw std::invalid_argument("measurement lengths do not match the ensembles");
  }
  if (!u.allFinite() || !v.allFinite()) {
    throw std::invalid_argument("measurements must be finite");
  }
  if (se_states.empty()) throw std::invalid_argument("se schedule must be nonempty");
  if (max_iter < 1 || !(stop_tol > 0.0)) {
    throw std::invalid_argument("need max_iter >= 1 and stop_tol > 0");
  }
  const Eigen::Index n = a.n();
  if (truth != nullptr && (truth->rows() != 2 || truth->cols() != n)) {
    throw std::invalid_argument("truth must be 2 x n");
  }

  const Eigen::MatrixXd& w = a.weight.entries;
  const Eigen::Index lr = w.rows(), lc = w.cols();
  const Eigen::Index bn = a.block_n, bmx = a.block_m, bmy = b.block_m;
  const Eigen::Index mx = a.m(), my = b.m();

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd r_prev, s_prev;
  Eigen::VectorXd jac_prev_x = Eigen::VectorXd::Zero(lc);
  Eigen::VectorXd jac_prev_y = Eigen::VectorXd::Zero(lc);
  Eigen::MatrixXd q_prev_x, q_prev_y;

  CoupledMampResult result;
  double prev_mse_x = 0.0, prev_mse_y = 0.0;
  Eigen::VectorXd forward, back, r, s, g(n), h(n), x_old, y_old;
  Eigen::MatrixXd obs(2, bn);

  const std::size_t s_count = se_states.size();

  for (int it = 0; it < max_iter; ++it) {
    const BlockState& state =
        se_states[std::min(static_cast<std::size_t>(it) + 1, s_count - 1)];
    if (state.phi_x.size() != lr || state.phi_y.size() != lr) {
      throw std::invalid_argument("se state block count does not match the weight matrix");
    }

    blockops::block_matvec(a.matrix, bmx, bn, w, x, forward);
    r = u - forward;
    if (it > 0) {
      for (Eigen::Index rb = 0; rb < lr; ++rb) {
        double acc = 0.0;
        for (Eigen::Index c = 0; c < lc; ++c) {
          if (w(rb, c) == 0.0) continue;
          acc += w(rb, c) * q_prev_x(rb, c) * jac_prev_x[c];
        }
        const double coef = acc / a.delta;
        r.segment(rb * bmx, bmx) += coef * r_prev.segment(rb * bmx, bmx);
      }
    }
    blockops::block_matvec(b.matrix, bmy, bn, w, y, forward);
    s = v - forward;
    if (it > 0) {
      for (Eigen::Index rb = 0; rb < lr; ++rb) {
        double acc = 0.0;
        for (Eigen::Index c = 0; c < lc; ++c) {
          if (w(rb, c) == 0.0) continue;
          acc += w(rb, c) * q_prev_y(rb, c) * jac_prev_y[c];
        }
        const double coef = acc / b.delta;
        s.segment(rb * bmy, bmy) += coef * s_prev.segment(rb * bmy, bmy);
      }
    }

    CoupledIterationRecord rec;
    rec.residual_var_x = r.squaredNorm() / static_cast<double>(mx);
    rec.residual_var_y = s.squaredNorm() / static_cast<double>(my);

    const Eigen::MatrixXd q_x = q_matrix(state.phi_x, a.weight);
    const Eigen::MatrixXd q_y = q_matrix(state.phi_y, a.weight);
    blockops::block_tmatvec_scaled(a.matrix, bmx, bn, w, q_x, r, back);
    g = x + back;
    blockops::block_tmatvec_scaled(b.matrix, bmy, bn, w, q_y, s, back);
    h = y + back;

    const Eigen::VectorXd s_x = column_precisions(w, state.phi_x);
    const Eigen::VectorXd s_y = column_precisions(w, state.phi_y);

    x_old = std::move(x);
    y_old = std::move(y);
    x.resize(n);
    y.resize(n);
    Eigen::VectorXd jac_x(lc), jac_y(lc);
    rec.block_mse_x = Eigen::VectorXd::Constant(lc, std::numeric_limits<double>::quiet_NaN());
    rec.block_mse_y = Eigen::VectorXd::Constant(lc, std::numeric_limits<double>::quiet_NaN());

    for (Eigen::Index c = 0; c < lc; ++c) {
      const double tau_x = (s_x[c] == 0.0) ? kInf : 1.0 / s_x[c];
      const double tau_y = (s_y[c] == 0.0) ? kInf : 1.0 / s_y[c];
      obs.row(0) = g.segment(c * bn, bn).transpose();
      obs.row(1) = h.segment(c * bn, bn).transpose();
      DenoiseResult dr =
          denoise(spec, NoiseModel::diagonal(Eigen::Vector2d(tau_x, tau_y)), obs);
      x.segment(c * bn, bn) = dr.estimates.row(0).transpose();
      y.segment(c * bn, bn) = dr.estimates.row(1).transpose();
      double ax = 0.0, ay = 0.0;
      for (Eigen::Index j = 0; j < bn; ++j) {
        ax += dr.jacobians(0, j);
        ay += dr.jacobians(1, j);
      }
      jac_x[c] = ax / static_cast<double>(bn);
      jac_y[c] = ay / static_cast<double>(bn);
      if (truth != nullptr) {
        rec.block_mse_x[c] =
            (x.segment(c * bn, bn) - truth->row(0).segment(c * bn, bn).transpose())
                .squaredNorm() /
            static_cast<double>(bn);
        rec.block_mse_y[c] =
            (y.segment(c * bn, bn) - truth->row(1).segment(c * bn, bn).transpose())
                .squaredNorm() /
            static_cast<double>(bn);
      }
    }

    q_prev_x = q_x;
    q_prev_y = q_y;
    jac_prev_x = jac_x;
    jac_prev_y = jac_y;
    r_prev = r;
    s_prev = s;

    double change;
    if (truth != nullptr) {
      rec.mse_x = rec.block_mse_x.sum() / static_cast<double>(lc);
      rec.mse_y = rec.block_mse_y.sum() / static_cast<double>(lc);
      change = (it == 0) ? kInf
                         : std::max(std::abs(rec.mse_x - prev_mse_x),
                                    std::abs(rec.mse_y - prev_mse_y));
      prev_mse_x = rec.mse_x;
      prev_mse_y = rec.mse_y;
      if (!std::isfinite(rec.mse_x) || !std::isfinite(rec.mse_y)) {
        throw NumericalError("coupled_mamp_run diverged at iteration " + std::to_string(it));
      }
    } else {
      rec.mse_x = std::numeric_limits<double>::quiet_NaN();
      rec.mse_y = std::numeric_limits<double>::quiet_NaN();
      change = (it == 0) ? kInf
                         : std::max((x - x_old).squaredNorm() / static_cast<double>(n),
                                    (y - y_old).squaredNorm() / static_cast<double>(n));
      if (!x.allFinite() || !y.allFinite()) {
        throw NumericalError("coupled_mamp_run diverged at iteration " + std::to_string(it));
      }
    }

    result.trace.iterations.push_back(rec);
    if (change < stop_tol) {
      result.trace.converged = true;
      break;
    }
  }

  result.x = std::move(x);
  result.y = std::move(y);
  return result;
}

std::vector<BoundaryPoint> phase_boundary_search(const WeightMatrix& weight,
                                                 const std::vector<double>& delta_x_grid,
                                                 double delta_y_lo, double delta_y_hi,
                                                 double sigma2_x, double sigma2_y,
                                                 int max_time, const MmseSampler& sampler,
                                                 double recovery_threshold,
                                                 double bisect_tol) {
  if (delta_x_grid.empty()) throw std::invalid_argument("delta_x grid must be nonempty");
  if (!(delta_y_lo > 0.0) || !(delta_y_hi > delta_y_lo)) {
    throw std::invalid_argument("need 0 < delta_y_lo < delta_y_hi");
  }
  if (!(bisect_tol > 0.0)) throw std::invalid_argument("bisect_tol must be positive");

  CoupledSeOptions opts;
  opts.recovery_threshold = recovery_threshold;
  opts.stall_tol = 1e-13;

  std::vector<BoundaryPoint> points;
  points.reserve(delta_x_grid.size());
  for (double dx : delta_x_grid) {
    auto recovers = [&](double dy) -> std::pair<bool, int> {
      CoupledSeParams params{dx, dy, sigma2_x, sigma2_y};
      CoupledSeResult run = coupled_se_run(weight, params, max_time, sampler, opts);
      return {run.recovered, run.recovered_at};
    };

    BoundaryPoint point;
    point.delta_x = dx;
    auto [hi_ok, hi_t] = recovers(delta_y_hi);
    if (!hi_ok) {
      point.delta_y_boundary = std::numeric_limits<double>::quiet_NaN();
      point.converged_t = -1;
      point.anomaly = true;
      points.push_back(point);
      continue;
    }
    auto [lo_ok, lo_t] = recovers(delta_y_lo);
    if (lo_ok) {
      point.delta_y_boundary = delta_y_lo;
      point.converged_t = lo_t;
      point.anomaly = true;
      points.push_back(point);
      continue;
    }

    double lo = delta_y_lo, hi = delta_y_hi;
    int hi_time = hi_t;
    while (hi - lo > bisect_tol) {
      const double mid = 0.5 * (lo + hi);
      auto [ok, t_rec] = recovers(mid);
      if (ok) {
        hi = mid;
        hi_time = t_rec;
      } else {
        lo = mid;
      }
    }
    point.delta_y_boundary = hi;
    point.converged_t = hi_time;
    point.anomaly = false;
    points.push_back(point);
  }
  return points;
}

}  // namespace mtcs
