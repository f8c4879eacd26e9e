#include "mtcs/se.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "mtcs/errors.hpp"
#include "mtcs/rng.hpp"

namespace mtcs {

namespace {

void check_params(const SeParams& params) {
  if (!(params.rho_x > 0.0) || !std::isfinite(params.rho_x) ||
      !(params.rho_y > 0.0) || !std::isfinite(params.rho_y)) {
    throw std::invalid_argument("measurement rates must be positive and finite");
  }
  if (!(params.sigma2_x >= 0.0) || !std::isfinite(params.sigma2_x) ||
      !(params.sigma2_y >= 0.0) || !std::isfinite(params.sigma2_y)) {
    throw std::invalid_argument("noise variances must be nonnegative and finite");
  }
}

void check_state(const ScalarState& state) {
  if (!(state.tau_x > 0.0) || !(state.tau_y > 0.0) ||
      std::isnan(state.tau_x) || std::isnan(state.tau_y)) {
    throw std::invalid_argument("effective noise variances must be positive (inf allowed)");
  }
}

double precision_of(double tau) { return std::isinf(tau) ? 0.0 : 1.0 / tau; }

ScalarState step_with(const SeParams& params, const ScalarState& state,
                      const MmseSampler& sampler) {
  auto [mx, my] = sampler.mmse2(precision_of(state.tau_x), precision_of(state.tau_y));
  return {params.sigma2_x + mx / params.rho_x, params.sigma2_y + my / params.rho_y};
}

}  // namespace

ScalarState se_step(const SeParams& params, const ScalarState& state,
                    const MmseSampler& sampler) {
  check_params(params);
  check_state(state);
  return step_with(params, state, sampler);
}

ScalarState se_step(const SourceSpec& spec, const SeParams& params,
                    const ScalarState& state, const McParams& mc) {
  MmseSampler sampler(spec, mc.samples, mc.seed);
  return se_step(params, state, sampler);
}

namespace {

SeFixedPointResult fixed_point_with(const SeParams& params, const MmseSampler& sampler,
                                    double tol, int max_iter) {
  check_params(params);
  if (!(tol > 0.0) || max_iter < 1) {
    throw std::invalid_argument("fixed point needs tol > 0 and max_iter >= 1");
  }
  SeFixedPointResult out;
  ScalarState state;  // (inf, inf)
  for (int t = 0; t < max_iter; ++t) {
    ScalarState next = step_with(params, state, sampler);
    out.trajectory.push_back(next);
    out.iterations = t + 1;
    double dx = std::isinf(state.tau_x) ? std::numeric_limits<double>::infinity()
                                        : std::abs(next.tau_x - state.tau_x);
    double dy = std::isinf(state.tau_y) ? std::numeric_limits<double>::infinity()
                                        : std::abs(next.tau_y - state.tau_y);
    state = next;
    if (dx < tol && dy < tol) {
      out.converged = true;
      break;
    }
  }
  out.state = state;
  return out;
}

}  // namespace

SeFixedPointResult se_fixed_point(const SeParams& params, const MmseSampler& sampler,
                                  double tol, int max_iter) {
  return fixed_point_with(params, sampler, tol, max_iter);
}

SeFixedPointResult se_fixed_point(const SourceSpec& spec, const SeParams& params,
                                  const McParams& mc, double tol, int max_iter) {
  MmseSampler sampler(spec, mc.samples, mc.seed);
  return fixed_point_with(params, sampler, tol, max_iter);
}

double distortion(const SeParams& params, const ScalarState& state) {
  return 0.5 * (params.rho_x * state.tau_x + params.rho_y * state.tau_y);
}

std::vector<GridCell> rate_distortion_grid(const SourceSpec& spec,
                                           const std::vector<double>& rho_grid_x,
                                           const std::vector<double>& rho_grid_y,
                                           double sigma2_x, double sigma2_y,
                                           const McParams& mc, double tol, int max_iter) {
  if (rho_grid_x.empty() || rho_grid_y.empty()) {
    throw std::invalid_argument("rate grids must be nonempty");
  }
  MmseSampler sampler(spec, mc.samples, mc.seed);
  const std::ptrdiff_t nx = static_cast<std::ptrdiff_t>(rho_grid_x.size());
  const std::ptrdiff_t ny = static_cast<std::ptrdiff_t>(rho_grid_y.size());
  std::vector<GridCell> cells(static_cast<std::size_t>(nx * ny));
#pragma omp parallel for collapse(2) schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < nx; ++i) {
    for (std::ptrdiff_t j = 0; j < ny; ++j) {
      SeParams params{rho_grid_x[static_cast<std::size_t>(i)],
                      rho_grid_y[static_cast<std::size_t>(j)], sigma2_x, sigma2_y};
      SeFixedPointResult fp = fixed_point_with(params, sampler, tol, max_iter);
      GridCell& cell = cells[static_cast<std::size_t>(i * ny + j)];
      cell.rho_x = params.rho_x;
      cell.rho_y = params.rho_y;
      cell.tau_x = fp.state.tau_x;
      cell.tau_y = fp.state.tau_y;
      cell.distortion = distortion(params, fp.state);
      cell.converged = fp.converged;
      cell.iterations = fp.iterations;
    }
  }
  return cells;
}

std::vector<FreshCheckRecord> fresh_matrix_se_check(const SourceSpec& spec,
                                                    const SeParams& params, Eigen::Index n,
                                                    int iterations, std::uint64_t seed,
                                                    const McParams& mc) {
  check_params(params);
  if (spec.terminals() != 2) {
    throw std::invalid_argument("fresh matrix check needs a two-terminal spec");
  }
  if (n < 1 || iterations < 1) {
    throw std::invalid_argument("fresh matrix check needs n >= 1 and iterations >= 1");
  }
  const Eigen::Index m_x = static_cast<Eigen::Index>(std::lround(params.rho_x * static_cast<double>(n)));
  const Eigen::Index m_y = static_cast<Eigen::Index>(std::lround(params.rho_y * static_cast<double>(n)));
  if (m_x < 1 || m_y < 1) {
    throw std::invalid_argument("rates too small for the requested n");
  }
  // The finite instance quantizes the rates to m/n; predictions use the same values.
  SeParams eff = params;
  eff.rho_x = static_cast<double>(m_x) / static_cast<double>(n);
  eff.rho_y = static_cast<double>(m_y) / static_cast<double>(n);

  MmseSampler sampler(spec, mc.samples, mc.seed);
  Eigen::MatrixXd truth = sample_source(spec, n, seed);
  Eigen::VectorXd x0 = truth.row(0).transpose();
  Eigen::VectorXd y0 = truth.row(1).transpose();

  RandomStream wx_stream(seed, StreamTag::kStreamMeasureNoise, {0});
  RandomStream wy_stream(seed, StreamTag::kStreamMeasureNoise, {1});
  Eigen::VectorXd w_x(m_x), w_y(m_y);
  const double sd_x = std::sqrt(params.sigma2_x), sd_y = std::sqrt(params.sigma2_y);
  for (Eigen::Index i = 0; i < m_x; ++i) w_x[i] = sd_x * wx_stream.gaussian_at(static_cast<std::uint64_t>(i));
  for (Eigen::Index i = 0; i < m_y; ++i) w_y[i] = sd_y * wy_stream.gaussian_at(static_cast<std::uint64_t>(i));

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(n);

  ScalarState state;  // SE trajectory alongside the iteration
  std::vector<FreshCheckRecord> records;
  records.reserve(static_cast<std::size_t>(iterations));

  for (int t = 0; t < iterations; ++t) {
    ScalarState tau = step_with(eff, state, sampler);
    state = tau;

    Eigen::MatrixXd a(m_x, n);
    Eigen::MatrixXd b(m_y, n);
    {
      RandomStream as(seed, StreamTag::kStreamFreshEnsemble, {0, static_cast<std::uint64_t>(t)});
      RandomStream bs(seed, StreamTag::kStreamFreshEnsemble, {1, static_cast<std::uint64_t>(t)});
      const double sa = std::sqrt(1.0 / static_cast<double>(m_x));
      const double sb = std::sqrt(1.0 / static_cast<double>(m_y));
#pragma omp parallel for schedule(static)
      for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < m_x; ++i) {
          a(i, j) = sa * as.gaussian_at(static_cast<std::uint64_t>(j * m_x + i));
        }
        for (Eigen::Index i = 0; i < m_y; ++i) {
          b(i, j) = sb * bs.gaussian_at(static_cast<std::uint64_t>(j * m_y + i));
        }
      }
    }

    Eigen::VectorXd u = a * x0 + w_x;
    Eigen::VectorXd v = b * y0 + w_y;
    Eigen::VectorXd g = x + a.transpose() * (u - a * x);
    Eigen::VectorXd h = y + b.transpose() * (v - b * y);

    FreshCheckRecord rec;
    rec.iteration = t;
    rec.tau_se_x = tau.tau_x;
    rec.tau_se_y = tau.tau_y;
    rec.tau_emp_x = (g - x0).squaredNorm() / static_cast<double>(n);
    rec.tau_emp_y = (h - y0).squaredNorm() / static_cast<double>(n);
    if (!std::isfinite(rec.tau_emp_x) || !std::isfinite(rec.tau_emp_y)) {
      throw NumericalError("fresh matrix check diverged at iteration " + std::to_string(t));
    }
    records.push_back(rec);

    Eigen::MatrixXd obs(2, n);
    obs.row(0) = g.transpose();
    obs.row(1) = h.transpose();
    DenoiseResult dr = denoise(spec, NoiseModel::diagonal(Eigen::Vector2d(tau.tau_x, tau.tau_y)), obs);
    x = dr.estimates.row(0).transpose();
    y = dr.estimates.row(1).transpose();
  }
  return records;
}

}  // namespace mtcs
