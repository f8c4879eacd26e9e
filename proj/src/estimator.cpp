#include "mtcs/estimator.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "mtcs/errors.hpp"

namespace mtcs {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kMaxHotTerminals = 16;
constexpr Eigen::Index kReduceBlock = 4096;

void validate_noise(Eigen::Index t, const NoiseModel& noise) {
  const Eigen::MatrixXd& c = noise.covariance;
  if (c.rows() != t || c.cols() != t)
    throw std::invalid_argument("noise model: covariance must be t x t");
  for (Eigen::Index i = 0; i < t; ++i) {
    const double d = c(i, i);
    if (std::isnan(d) || d <= 0.0)
      throw std::invalid_argument("noise model: diagonal entries must be positive or +inf");
    for (Eigen::Index j = 0; j < t; ++j) {
      if (i == j) continue;
      const double o = c(i, j);
      if (!std::isfinite(o))
        throw std::invalid_argument("noise model: off-diagonal entries must be finite");
      if (std::isinf(d) && o != 0.0)
        throw std::invalid_argument("noise model: absent terminal must have zero cross terms");
      if (std::abs(o - c(j, i)) > 1e-12 * (1.0 + std::abs(o)))
        throw std::invalid_argument("noise model: covariance must be symmetric");
    }
  }
}

}  // namespace

NoiseModel NoiseModel::diagonal(const Eigen::VectorXd& taus) {
  NoiseModel nm;
  nm.covariance = Eigen::MatrixXd::Zero(taus.size(), taus.size());
  for (Eigen::Index i = 0; i < taus.size(); ++i) nm.covariance(i, i) = taus[i];
  return nm;
}

PosteriorEngine::PosteriorEngine(const SourceSpec& spec, const NoiseModel& noise)
    : spec_(spec) {
  validate_spec(spec);
  t_ = spec.terminals();
  if (t_ > kMaxHotTerminals)
    throw std::invalid_argument("posterior engine: more than 16 terminals not supported");
  validate_noise(t_, noise);
  const Eigen::Index k = spec.components();
  if (k > kMaxEnumerationComponents)
    throw std::invalid_argument("posterior engine: component count exceeds enumeration cap");

  for (Eigen::Index i = 0; i < t_; ++i)
    if (std::isfinite(noise.covariance(i, i))) observed_.push_back(static_cast<int>(i));
  p_ = static_cast<int>(observed_.size());

  diag_noise_ = true;
  for (int a = 0; a < p_ && diag_noise_; ++a)
    for (int b = 0; b < p_; ++b)
      if (a != b && noise.covariance(observed_[a], observed_[b]) != 0.0) {
        diag_noise_ = false;
        break;
      }
  if (diag_noise_)
    for (int a = 0; a < p_; ++a)
      inv_tau_.push_back(1.0 / noise.covariance(observed_[a], observed_[a]));

  prior_cov_ = spec.mixing * spec.mixing.transpose();
  prior_var_ = prior_cov_.diagonal();
  if (p_ == 0) return;

  // Components with alpha = 1 are always active; only the remaining ones
  // need enumerating.
  std::vector<int> free_idx;
  std::uint32_t forced = 0;
  for (Eigen::Index i = 0; i < k; ++i) {
    if (spec.alphas[i] < 1.0)
      free_idx.push_back(static_cast<int>(i));
    else
      forced |= 1u << i;
  }
  free_count_ = static_cast<int>(free_idx.size());

  const Eigen::Index npat = Eigen::Index(1) << free_count_;
  stride_ = 1 + Eigen::Index(p_) * p_ + t_ * p_ + t_ + t_ * t_;
  data_.assign(static_cast<size_t>(npat * stride_), 0.0);
  pattern_bits_.resize(static_cast<size_t>(npat));

  Eigen::MatrixXd noise_pp(p_, p_);
  for (int a = 0; a < p_; ++a)
    for (int b = 0; b < p_; ++b) noise_pp(a, b) = noise.covariance(observed_[a], observed_[b]);

  Eigen::MatrixXd cs_forced = Eigen::MatrixXd::Zero(t_, t_);
  for (Eigen::Index i = 0; i < k; ++i)
    if (spec.alphas[i] >= 1.0)
      cs_forced += spec.mixing.col(i) * spec.mixing.col(i).transpose();

  for (Eigen::Index m = 0; m < npat; ++m) {
    std::uint32_t bits = forced;
    double log_prior = 0.0;
    Eigen::MatrixXd cs = cs_forced;
    for (int f = 0; f < free_count_; ++f) {
      const int i = free_idx[f];
      const double a = spec.alphas[i];
      if (m & (Eigen::Index(1) << f)) {
        bits |= 1u << i;
        log_prior += std::log(a);
        cs += (1.0 / a) * spec.mixing.col(i) * spec.mixing.col(i).transpose();
      } else {
        log_prior += std::log1p(-a);
      }
    }
    pattern_bits_[static_cast<size_t>(m)] = bits;

    Eigen::MatrixXd cs_pp(p_, p_);
    Eigen::MatrixXd cs_tp(t_, p_);
    for (int a = 0; a < p_; ++a) {
      for (int b = 0; b < p_; ++b) cs_pp(a, b) = cs(observed_[a], observed_[b]);
      for (Eigen::Index o = 0; o < t_; ++o) cs_tp(o, a) = cs(o, observed_[a]);
    }
    Eigen::MatrixXd obs_cov = cs_pp + noise_pp;
    Eigen::LLT<Eigen::MatrixXd> llt(obs_cov);
    if (llt.info() != Eigen::Success) {
      // singular covariance (degenerate noise model or rank-deficient mixing):
      // retry with a relative diagonal bump before giving up
      const double bump = 1e-12 * obs_cov.diagonal().maxCoeff();
      if (!(bump > 0.0))
        throw NumericalError("posterior engine: observation covariance not positive definite");
      obs_cov.diagonal().array() += bump;
      llt.compute(obs_cov);
      if (llt.info() != Eigen::Success)
        throw NumericalError("posterior engine: observation covariance not positive definite");
    }
    double logdet = 0.0;
    for (int a = 0; a < p_; ++a) logdet += 2.0 * std::log(llt.matrixL()(a, a));
    const Eigen::MatrixXd prec = llt.solve(Eigen::MatrixXd::Identity(p_, p_));
    const Eigen::MatrixXd gain = cs_tp * prec;
    const Eigen::MatrixXd pcov = cs - gain * cs_tp.transpose();

    double* d = data_.data() + m * stride_;
    d[0] = log_prior - 0.5 * logdet;
    double* prec_out = d + 1;
    double* gain_out = prec_out + Eigen::Index(p_) * p_;
    double* pvar_out = gain_out + t_ * p_;
    double* pcov_out = pvar_out + t_;
    for (int a = 0; a < p_; ++a)
      for (int b = 0; b < p_; ++b) prec_out[a * p_ + b] = prec(a, b);
    for (Eigen::Index o = 0; o < t_; ++o)
      for (int a = 0; a < p_; ++a) gain_out[o * p_ + a] = gain(o, a);
    for (Eigen::Index o = 0; o < t_; ++o) pvar_out[o] = std::max(0.0, pcov(o, o));
    for (Eigen::Index o = 0; o < t_; ++o)
      for (Eigen::Index q = 0; q < t_; ++q) pcov_out[o * t_ + q] = pcov(o, q);
  }
}

void PosteriorEngine::moments_diag(const double* x, double* mean, double* var,
                                   double* jac) const {
  const int t = static_cast<int>(t_);
  if (p_ == 0) {
    for (int o = 0; o < t; ++o) {
      mean[o] = 0.0;
      var[o] = prior_var_[o];
      if (jac) jac[o] = 0.0;
    }
    return;
  }
  if (jac && !diag_noise_)
    throw std::invalid_argument("moments_diag: jacobians require diagonal noise");

  double xp[kMaxHotTerminals];
  for (int a = 0; a < p_; ++a) xp[a] = x[observed_[a]];

  double mmax = -kInf;
  double wsum = 0.0;
  double macc[kMaxHotTerminals] = {0};
  double vacc[kMaxHotTerminals] = {0};

  const Eigen::Index npat = Eigen::Index(1) << free_count_;
  for (Eigen::Index m = 0; m < npat; ++m) {
    const double* d = pattern(m);
    const double* prec = d + 1;
    const double* gain = prec + Eigen::Index(p_) * p_;
    const double* pvar = gain + Eigen::Index(t) * p_;

    double quad = 0.0;
    for (int a = 0; a < p_; ++a) {
      double s = 0.0;
      const double* row = prec + a * p_;
      for (int b = 0; b < p_; ++b) s += row[b] * xp[b];
      quad += xp[a] * s;
    }
    const double lw = d[0] - 0.5 * quad;

    double w;
    if (lw > mmax) {
      const double rescale = std::exp(mmax - lw);
      wsum *= rescale;
      for (int o = 0; o < t; ++o) {
        macc[o] *= rescale;
        vacc[o] *= rescale;
      }
      mmax = lw;
      w = 1.0;
    } else {
      w = std::exp(lw - mmax);
    }
    wsum += w;
    for (int o = 0; o < t; ++o) {
      double mo = 0.0;
      const double* grow = gain + o * p_;
      for (int a = 0; a < p_; ++a) mo += grow[a] * xp[a];
      macc[o] += w * mo;
      vacc[o] += w * (pvar[o] + mo * mo);
    }
  }

  for (int o = 0; o < t; ++o) {
    mean[o] = macc[o] / wsum;
    const double v = vacc[o] / wsum - mean[o] * mean[o];
    var[o] = v > 0.0 ? v : 0.0;
    if (jac) jac[o] = 0.0;
  }
  if (jac)
    for (int a = 0; a < p_; ++a) {
      const int o = observed_[a];
      jac[o] = var[o] * inv_tau_[a];
    }
}

PosteriorSummary PosteriorEngine::posterior(const Eigen::VectorXd& x) const {
  if (x.size() != t_) throw std::invalid_argument("posterior: observation size mismatch");
  if (!x.allFinite()) throw std::invalid_argument("posterior: non-finite observation");

  const Eigen::Index k = spec_.components();
  PosteriorSummary out;
  out.pattern_posteriors = Eigen::VectorXd::Zero(Eigen::Index(1) << k);

  if (p_ == 0) {
    // With no observations the posterior is the prior.
    out.mean = Eigen::VectorXd::Zero(t_);
    out.covariance = prior_cov_;
    for (Eigen::Index bits = 0; bits < out.pattern_posteriors.size(); ++bits) {
      double prob = 1.0;
      for (Eigen::Index i = 0; i < k; ++i)
        prob *= (bits & (Eigen::Index(1) << i)) ? spec_.alphas[i] : 1.0 - spec_.alphas[i];
      out.pattern_posteriors[bits] = prob;
    }
    return out;
  }

  double xp[kMaxHotTerminals];
  for (int a = 0; a < p_; ++a) xp[a] = x[observed_[a]];

  const Eigen::Index npat = Eigen::Index(1) << free_count_;
  Eigen::VectorXd lw(npat);
  for (Eigen::Index m = 0; m < npat; ++m) {
    const double* d = pattern(m);
    const double* prec = d + 1;
    double quad = 0.0;
    for (int a = 0; a < p_; ++a) {
      double s = 0.0;
      for (int b = 0; b < p_; ++b) s += prec[a * p_ + b] * xp[b];
      quad += xp[a] * s;
    }
    lw[m] = d[0] - 0.5 * quad;
  }
  const double mx = lw.maxCoeff();
  Eigen::VectorXd w = (lw.array() - mx).exp();
  w /= w.sum();

  Eigen::VectorXd mean(t_), mvar(t_);
  moments_diag(x.data(), mean.data(), mvar.data(), nullptr);
  Eigen::MatrixXd second = Eigen::MatrixXd::Zero(t_, t_);
  for (Eigen::Index m = 0; m < npat; ++m) {
    const double* d = pattern(m);
    const double* gain = d + 1 + Eigen::Index(p_) * p_;
    const double* pcov = gain + t_ * p_ + t_;
    Eigen::VectorXd mo(t_);
    for (Eigen::Index o = 0; o < t_; ++o) {
      double v = 0.0;
      for (int a = 0; a < p_; ++a) v += gain[o * p_ + a] * xp[a];
      mo[o] = v;
    }
    for (Eigen::Index o = 0; o < t_; ++o)
      for (Eigen::Index q = 0; q < t_; ++q)
        second(o, q) += w[m] * (pcov[o * t_ + q] + mo[o] * mo[q]);
    out.pattern_posteriors[pattern_bits_[static_cast<size_t>(m)]] += w[m];
  }
  out.mean = mean;
  Eigen::MatrixXd cov = second - mean * mean.transpose();
  out.covariance = 0.5 * (cov + cov.transpose());
  return out;
}

PosteriorSummary posterior(const SourceSpec& spec, const NoiseModel& noise,
                           const Eigen::VectorXd& x) {
  return PosteriorEngine(spec, noise).posterior(x);
}

Eigen::VectorXd jacobian_diag(const SourceSpec& spec, const NoiseModel& noise,
                              const Eigen::VectorXd& x) {
  PosteriorEngine engine(spec, noise);
  const Eigen::Index t = engine.terminals();
  Eigen::VectorXd jac = Eigen::VectorXd::Zero(t);
  if (engine.observed_count() == 0) return jac;

  bool diag = true;
  for (int a : engine.observed())
    for (int b : engine.observed())
      if (a != b && noise.covariance(a, b) != 0.0) diag = false;

  if (diag) {
    Eigen::VectorXd mean(t), var(t);
    engine.moments_diag(x.data(), mean.data(), var.data(), jac.data());
    return jac;
  }

  const PosteriorSummary ps = engine.posterior(x);
  const auto& obs = engine.observed();
  const int p = static_cast<int>(obs.size());
  Eigen::MatrixXd npp(p, p);
  for (int a = 0; a < p; ++a)
    for (int b = 0; b < p; ++b) npp(a, b) = noise.covariance(obs[a], obs[b]);
  Eigen::MatrixXd cov_tp(t, p);
  for (Eigen::Index o = 0; o < t; ++o)
    for (int a = 0; a < p; ++a) cov_tp(o, a) = ps.covariance(o, obs[a]);
  const Eigen::MatrixXd j = cov_tp * npp.inverse();
  for (int a = 0; a < p; ++a) jac[obs[a]] = j(obs[a], a);
  return jac;
}

namespace {

DenoiseResult denoise_impl(const SourceSpec& spec, const NoiseModel& noise,
                           const Eigen::MatrixXd& observations, bool parallel) {
  PosteriorEngine engine(spec, noise);
  const Eigen::Index t = engine.terminals();
  if (observations.rows() != t)
    throw std::invalid_argument("denoise: observation rows must match terminals");
  const Eigen::Index n = observations.cols();
  DenoiseResult out;
  out.estimates.resize(t, n);
  out.jacobians.resize(t, n);

#pragma omp parallel for schedule(static) if (parallel && n > 64)
  for (Eigen::Index j = 0; j < n; ++j) {
    double mean[kMaxHotTerminals], var[kMaxHotTerminals], jac[kMaxHotTerminals];
    engine.moments_diag(observations.col(j).data(), mean, var, jac);
    for (Eigen::Index o = 0; o < t; ++o) {
      out.estimates(o, j) = mean[o];
      out.jacobians(o, j) = jac[o];
    }
  }
  return out;
}

}  // namespace

DenoiseResult denoise(const SourceSpec& spec, const NoiseModel& noise,
                      const Eigen::MatrixXd& observations) {
  return denoise_impl(spec, noise, observations, true);
}

DenoiseResult denoise_serial(const SourceSpec& spec, const NoiseModel& noise,
                             const Eigen::MatrixXd& observations) {
  return denoise_impl(spec, noise, observations, false);
}

MmseSampler::MmseSampler(const SourceSpec& spec, std::int64_t samples, std::uint64_t seed)
    : spec_(spec), samples_(samples), seed_(seed) {
  validate_spec(spec);
  if (samples < 1) throw std::invalid_argument("mmse sampler: samples must be positive");
  const Eigen::Index t = spec.terminals();
  const Eigen::Index k = spec.components();
  const RandomStream support(seed, kStreamMmseSupport);
  const RandomStream gauss(seed, kStreamMmseGauss);
  const RandomStream chan(seed, kStreamMmseNoise);

  signals_.resize(t, samples);
  noise_.resize(t, samples);
#pragma omp parallel for schedule(static) if (samples > 1024)
  for (std::int64_t j = 0; j < samples; ++j) {
    Eigen::VectorXd z(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      const std::uint64_t idx = static_cast<std::uint64_t>(j) * k + i;
      const bool active = support.uniform_at(idx) < spec.alphas[i];
      z[i] = active ? std::sqrt(1.0 / spec.alphas[i]) * gauss.gaussian_at(idx) : 0.0;
    }
    signals_.col(j) = spec.mixing * z;
    for (Eigen::Index o = 0; o < t; ++o)
      noise_(o, j) = chan.gaussian_at(static_cast<std::uint64_t>(j) * t + o);
  }
}

namespace {

// Shared precision handling: zero marks an absent channel, huge or infinite
// precisions clamp to kMaxChannelPrecision.
bool precisions_to_taus(const Eigen::VectorXd& precisions, Eigen::VectorXd& taus) {
  bool any = false;
  taus.resize(precisions.size());
  for (Eigen::Index o = 0; o < precisions.size(); ++o) {
    if (std::isnan(precisions[o]) || precisions[o] < 0.0)
      throw std::invalid_argument("mmse: precisions must be nonnegative");
    if (precisions[o] > 0.0) {
      taus[o] = 1.0 / std::min(precisions[o], kMaxChannelPrecision);
      any = true;
    } else {
      taus[o] = kInf;
    }
  }
  return any;
}

}  // namespace

Eigen::VectorXd MmseSampler::mmse_impl(const Eigen::VectorXd& precisions, bool parallel) const {
  const Eigen::Index t = spec_.terminals();
  if (precisions.size() != t)
    throw std::invalid_argument("mmse: precision vector size mismatch");
  Eigen::VectorXd taus;
  if (!precisions_to_taus(precisions, taus)) return source_covariance(spec_).diagonal();

  const PosteriorEngine engine(spec_, NoiseModel::diagonal(taus));
  const auto& obs = engine.observed();
  const int p = static_cast<int>(obs.size());
  double sq[kMaxHotTerminals];
  for (int a = 0; a < p; ++a) sq[a] = std::sqrt(taus[obs[a]]);

  if (!parallel) {
    // Reference path: one straight accumulation in sample order.
    double x[kMaxHotTerminals] = {0};
    double mean[kMaxHotTerminals], var[kMaxHotTerminals];
    Eigen::VectorXd out = Eigen::VectorXd::Zero(t);
    for (std::int64_t j = 0; j < samples_; ++j) {
      for (int a = 0; a < p; ++a) {
        const int o = obs[a];
        x[o] = signals_(o, j) + sq[a] * noise_(o, j);
      }
      engine.moments_diag(x, mean, var, nullptr);
      for (Eigen::Index o = 0; o < t; ++o) out[o] += var[o];
    }
    return out / static_cast<double>(samples_);
  }

  // Fixed-size blocks keep the reduction order independent of thread count.
  const Eigen::Index nblocks = (samples_ + kReduceBlock - 1) / kReduceBlock;
  std::vector<double> partial(static_cast<size_t>(nblocks * t), 0.0);

#pragma omp parallel for schedule(static) if (nblocks > 1)
  for (Eigen::Index b = 0; b < nblocks; ++b) {
    const std::int64_t lo = b * kReduceBlock;
    const std::int64_t hi = std::min<std::int64_t>(samples_, lo + kReduceBlock);
    double x[kMaxHotTerminals] = {0};
    double mean[kMaxHotTerminals], var[kMaxHotTerminals];
    double acc[kMaxHotTerminals] = {0};
    for (std::int64_t j = lo; j < hi; ++j) {
      for (int a = 0; a < p; ++a) {
        const int o = obs[a];
        x[o] = signals_(o, j) + sq[a] * noise_(o, j);
      }
      engine.moments_diag(x, mean, var, nullptr);
      for (Eigen::Index o = 0; o < t; ++o) acc[o] += var[o];
    }
    for (Eigen::Index o = 0; o < t; ++o) partial[static_cast<size_t>(b * t + o)] = acc[o];
  }

  Eigen::VectorXd out = Eigen::VectorXd::Zero(t);
  for (Eigen::Index b = 0; b < nblocks; ++b)
    for (Eigen::Index o = 0; o < t; ++o) out[o] += partial[static_cast<size_t>(b * t + o)];
  return out / static_cast<double>(samples_);
}

Eigen::VectorXd MmseSampler::mmse(const Eigen::VectorXd& precisions) const {
  return mmse_impl(precisions, true);
}

Eigen::VectorXd MmseSampler::mmse_serial(const Eigen::VectorXd& precisions) const {
  return mmse_impl(precisions, false);
}

std::pair<double, double> MmseSampler::mmse2(double s_x, double s_y) const {
  if (spec_.terminals() != 2)
    throw std::invalid_argument("mmse2: spec must have exactly two terminals");
  Eigen::VectorXd s(2);
  s << s_x, s_y;
  const Eigen::VectorXd m = mmse(s);
  return {m[0], m[1]};
}

std::pair<double, double> scalar_channel_mmse(const SourceSpec& spec, double s_x, double s_y,
                                              std::int64_t samples, std::uint64_t seed) {
  return MmseSampler(spec, samples, seed).mmse2(s_x, s_y);
}

}  // namespace mtcs
