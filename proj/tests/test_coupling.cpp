#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <doctest.h>

#include "mtcs/coupling.hpp"
#include "mtcs/errors.hpp"
#include "mtcs/mamp.hpp"
#include "oracles.hpp"
#include "specs.hpp"

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Independent re-derivation of the per-column effective precisions.
Eigen::VectorXd inflow(const mtcs::WeightMatrix& weight, const Eigen::VectorXd& phi) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(weight.cols());
  for (Eigen::Index c = 0; c < weight.cols(); ++c) {
    for (Eigen::Index r = 0; r < weight.rows(); ++r) {
      if (weight.entries(r, c) == 0.0 || std::isinf(phi[r])) continue;
      s[c] += weight.entries(r, c) / phi[r];
    }
  }
  return s;
}

int blocks_above(const Eigen::VectorXd& psi, double threshold) {
  int n = 0;
  for (Eigen::Index i = 0; i < psi.size(); ++i) {
    if (psi[i] > threshold) ++n;
  }
  return n;
}

}  // namespace

TEST_CASE("weight matrix is a uniform band plus dedicated seed rows") {
  const auto w = mtcs::build_weight_matrix(16, 2, 2, 1.0);
  CHECK(w.rows() == 16 + mtcs::kSeedRowsPerBlock * 2);
  CHECK(w.cols() == 16);
  CHECK(w.bandwidth == 2);
  CHECK(w.seed_blocks == 2);

  for (int r = 0; r < 16; ++r) {
    for (int c = 0; c < 16; ++c) {
      if (std::abs(r - c) <= 2) {
        CHECK(w.entries(r, c) == 0.2);
      } else {
        CHECK(w.entries(r, c) == 0.0);
      }
    }
  }
  // interior rows sum to one, truncated boundary rows stay above 1/2
  CHECK(w.entries.row(5).sum() == doctest::Approx(1.0));
  CHECK(w.entries.row(0).sum() == doctest::Approx(0.6));

  // each seeded column gets kSeedRowsPerBlock rows measuring it alone
  for (int j = 0; j < 2; ++j) {
    for (int q = 0; q < mtcs::kSeedRowsPerBlock; ++q) {
      const int r = 16 + mtcs::kSeedRowsPerBlock * j + q;
      CHECK(w.entries(r, j) == 1.0);
      CHECK(w.entries.row(r).sum() == 1.0);
    }
  }
  CHECK_NOTHROW(mtcs::validate_weight_matrix(w));
}

TEST_CASE("degenerate and invalid weight constructions") {
  const auto diag = mtcs::build_weight_matrix(5, 0, 0, 0.0);
  CHECK(diag.rows() == 5);
  CHECK(diag.entries.isApprox(Eigen::MatrixXd::Identity(5, 5)));

  const auto plain = mtcs::build_weight_matrix(16, 2, 0, 0.0);
  CHECK(plain.rows() == 16);
  for (Eigen::Index r = 0; r < plain.rows(); ++r) {
    CHECK(plain.entries.row(r).sum() >= 0.5);
    CHECK(plain.entries.row(r).sum() <= 2.0);
  }

  CHECK_THROWS_AS(mtcs::build_weight_matrix(4, 2, 0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(mtcs::build_weight_matrix(16, -1, 0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(mtcs::build_weight_matrix(16, 2, -1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(mtcs::build_weight_matrix(16, 2, 17, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(mtcs::build_weight_matrix(16, 2, 2, 0.0), std::invalid_argument);
  // dedicated row sums equal the boost, so the row-sum bound caps it
  CHECK_THROWS_AS(mtcs::build_weight_matrix(16, 2, 2, 0.4), std::invalid_argument);
  CHECK_THROWS_AS(mtcs::build_weight_matrix(16, 2, 2, 2.3), std::invalid_argument);

  mtcs::WeightMatrix bad;
  bad.entries = Eigen::MatrixXd::Constant(2, 2, 0.75);
  bad.entries(0, 0) = -0.1;
  CHECK_THROWS_AS(mtcs::validate_weight_matrix(bad), std::invalid_argument);
  bad.entries(0, 0) = 3.0;
  CHECK_THROWS_AS(mtcs::validate_weight_matrix(bad), std::invalid_argument);
  bad.entries = Eigen::MatrixXd::Zero(0, 0);
  CHECK_THROWS_AS(mtcs::validate_weight_matrix(bad), std::invalid_argument);

  const auto single = mtcs::single_block_weight();
  CHECK(single.rows() == 1);
  CHECK(single.cols() == 1);
  CHECK(single.entries(0, 0) == 1.0);
  CHECK_NOTHROW(mtcs::validate_weight_matrix(single));
}

TEST_CASE("q matrix columns are precision-weighted partitions of unity") {
  const auto single = mtcs::single_block_weight();
  const Eigen::MatrixXd q1 = mtcs::q_matrix(Eigen::VectorXd::Constant(1, 2.5), single);
  CHECK(q1(0, 0) == 1.0);

  const auto w = mtcs::build_weight_matrix(16, 2, 2, 1.0);
  Eigen::VectorXd phi(w.rows());
  mtcs::RandomStream stream(31, mtcs::kStreamOracle, {1});
  for (Eigen::Index r = 0; r < phi.size(); ++r) {
    phi[r] = 0.1 + std::abs(stream.gaussian_at(static_cast<std::uint64_t>(r)));
  }
  const Eigen::MatrixXd q = mtcs::q_matrix(phi, w);
  for (Eigen::Index c = 0; c < w.cols(); ++c) {
    double sum = 0.0;
    for (Eigen::Index r = 0; r < w.rows(); ++r) sum += w.entries(r, c) * q(r, c);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }

  // infinite-phi rows contribute nothing; columns they dominate fall back to 0
  phi[0] = kInf;
  const Eigen::MatrixXd qi = mtcs::q_matrix(phi, w);
  CHECK(qi(0, 0) == 0.0);
  for (Eigen::Index c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (Eigen::Index r = 0; r < w.rows(); ++r) sum += w.entries(r, c) * qi(r, c);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }

  mtcs::WeightMatrix split;
  split.entries = Eigen::MatrixXd::Identity(2, 2);
  Eigen::VectorXd phi2(2);
  phi2 << kInf, 2.0;
  const Eigen::MatrixXd q2 = mtcs::q_matrix(phi2, split);
  CHECK(q2(0, 0) == 0.0);
  CHECK(q2(1, 1) == 1.0);

  CHECK_THROWS_AS(mtcs::q_matrix(Eigen::VectorXd::Ones(3), w), std::invalid_argument);
}

TEST_CASE("coupled ensembles scale blocks by the weight matrix") {
  const auto w = mtcs::build_weight_matrix(16, 2, 2, 1.0);
  const auto e = mtcs::build_coupled_ensemble(w, 100, 120, 21);
  CHECK(e.m() == w.rows() * 100);
  CHECK(e.n() == 16 * 120);
  CHECK(e.delta == doctest::Approx(100.0 / 120.0));

  // zero-weight blocks are exactly zero
  CHECK(e.matrix.block(0 * 100, 5 * 120, 100, 120).isZero(0.0));
  CHECK(e.matrix.block(16 * 100, 1 * 120, 100, 120).isZero(0.0));

  // nonzero blocks have empirical variance near W / M
  const auto var_of = [&](Eigen::Index r, Eigen::Index c) {
    return e.matrix.block(r * 100, c * 120, 100, 120).array().square().mean();
  };
  CHECK(var_of(0, 0) > 0.95 * 0.2 / 100.0);
  CHECK(var_of(0, 0) < 1.05 * 0.2 / 100.0);
  CHECK(var_of(16, 0) > 0.95 * 1.0 / 100.0);
  CHECK(var_of(16, 0) < 1.05 * 1.0 / 100.0);

  const auto again = mtcs::build_coupled_ensemble(w, 100, 120, 21);
  CHECK(e.matrix == again.matrix);
  const auto other = mtcs::build_coupled_ensemble(w, 100, 120, 22);
  CHECK(e.matrix != other.matrix);

  // the identity-weight ensemble is the plain ensemble, bit for bit
  const auto idw = mtcs::single_block_weight();
  const auto ce = mtcs::build_coupled_ensemble(idw, 80, 160, 33);
  const auto ge = mtcs::make_ensemble(80, 160, 33);
  CHECK(ce.matrix == ge.matrix);

  CHECK_THROWS_AS(mtcs::build_coupled_ensemble(w, 0, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(mtcs::build_coupled_ensemble(w, 10, 0, 1), std::invalid_argument);
}

TEST_CASE("single-block coupled recursion equals the scalar state evolution") {
  const auto spec = testspec::chain();
  const mtcs::MmseSampler sampler(spec, 50000, 17);
  const auto w = mtcs::single_block_weight();
  const mtcs::CoupledSeParams cp{0.5, 0.6, 0.01, 0.02};
  mtcs::CoupledSeOptions opts;
  opts.recovery_threshold = 0.0;
  opts.stall_tol = 0.0;
  const auto coupled = mtcs::coupled_se_run(w, cp, 12, sampler, opts);
  REQUIRE(coupled.states.size() == 13);

  const mtcs::SeParams sp{0.5, 0.6, 0.01, 0.02};
  const auto scalar = mtcs::se_fixed_point(sp, sampler, 1e-300, 12);
  REQUIRE(scalar.trajectory.size() >= 12);

  // phi(t+1) tracks the scalar tau trajectory exactly: the shared sampler
  // makes the Monte-Carlo estimates identical, so the match is bitwise
  for (int t = 0; t < 12; ++t) {
    CHECK(coupled.states[static_cast<size_t>(t + 1)].phi_x(0) == scalar.trajectory[static_cast<size_t>(t)].tau_x);
    CHECK(coupled.states[static_cast<size_t>(t + 1)].phi_y(0) == scalar.trajectory[static_cast<size_t>(t)].tau_y);
  }

  CHECK_THROWS_AS(mtcs::coupled_se_run(w, cp, 0, sampler), std::invalid_argument);
  const mtcs::CoupledSeParams badp{-0.1, 0.6, 0.0, 0.0};
  CHECK_THROWS_AS(mtcs::coupled_se_run(w, badp, 5, sampler), std::invalid_argument);
}

TEST_CASE("identity-weight coupled message passing reduces to the flat engine") {
  const auto spec = testspec::chain();
  const Eigen::Index n = 500;
  const Eigen::MatrixXd truth = mtcs::sample_source(spec, n, 1234);

  const auto w = mtcs::single_block_weight();
  const auto ca = mtcs::build_coupled_ensemble(w, 250, n, 1334);
  const auto cb = mtcs::build_coupled_ensemble(w, 350, n, 1434);
  const Eigen::VectorXd u = mtcs::measure_matrix(ca.matrix, truth.row(0).transpose(), 0.0, 1534, 0);
  const Eigen::VectorXd v = mtcs::measure_matrix(cb.matrix, truth.row(1).transpose(), 0.0, 1534, 1);

  const mtcs::MmseSampler sampler(spec, 50000, 23);
  const mtcs::CoupledSeParams cp{ca.delta, cb.delta, 0.0, 0.0};
  mtcs::CoupledSeOptions opts;
  opts.recovery_threshold = 0.0;
  const auto se = mtcs::coupled_se_run(w, cp, 20, sampler, opts);

  const int iters = 15;
  const auto coupled =
      mtcs::coupled_mamp_run(ca, cb, u, v, spec, se.states, iters, 1e-300, &truth);

  mtcs::GaussianEnsemble ga{ca.matrix, ca.delta, ca.seed};
  mtcs::GaussianEnsemble gb{cb.matrix, cb.delta, cb.seed};
  std::vector<mtcs::ScalarState> taus;
  const size_t last = se.states.size() - 1;
  for (int i = 0; i < iters; ++i) {
    const auto& st = se.states[std::min(static_cast<size_t>(i + 1), last)];
    taus.push_back(mtcs::ScalarState{st.phi_x(0), st.phi_y(0)});
  }
  const auto flat = mtcs::mamp_run(ga, gb, u, v, spec, mtcs::TauSchedule::oracle(taus),
                                   mtcs::MampOptions{iters, 1e-300}, &truth);

  REQUIRE(coupled.trace.iterations.size() == flat.trace.iterations.size());
  CHECK((coupled.x - flat.x).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((coupled.y - flat.y).cwiseAbs().maxCoeff() < 1e-10);
  for (size_t t = 0; t < flat.trace.iterations.size(); ++t) {
    CHECK(coupled.trace.iterations[t].mse_x ==
          doctest::Approx(flat.trace.iterations[t].mse_x).epsilon(1e-10));
    CHECK(coupled.trace.iterations[t].mse_y ==
          doctest::Approx(flat.trace.iterations[t].mse_y).epsilon(1e-10));
    CHECK(coupled.trace.iterations[t].block_mse_x.size() == 1);
    CHECK(coupled.trace.iterations[t].block_mse_x(0) ==
          doctest::Approx(flat.trace.iterations[t].mse_x).epsilon(1e-10));
  }
}

TEST_CASE("supercritical rates drive a recovery wave that sweeps every block") {
  const mtcs::SourceSpec spec = testspec::chain();
  const mtcs::MmseSampler sampler(spec, 50000, 11);
  const auto w = mtcs::build_weight_matrix(8, 1, 2, 1.0);

  const auto slow = mtcs::coupled_se_run(w, {0.60, 0.40, 0.0, 0.0}, 200, sampler);
  CHECK(slow.recovered);
  CHECK(slow.recovered_at >= 40);
  CHECK(slow.recovered_at <= 130);

  const auto fast = mtcs::coupled_se_run(w, {0.65, 0.45, 0.0, 0.0}, 200, sampler);
  CHECK(fast.recovered);
  CHECK(fast.recovered_at < slow.recovered_at);

  const auto again = mtcs::coupled_se_run(w, {0.65, 0.45, 0.0, 0.0}, 200, sampler);
  CHECK(again.recovered_at == fast.recovered_at);

  // psi never increases along the trajectory, either terminal; below the
  // Monte-Carlo floor single borderline samples can bounce a recovered value,
  // so there the weaker claim is that it stays at recovery scale
  for (size_t t = 0; t + 1 < slow.states.size(); ++t) {
    for (Eigen::Index b = 0; b < 8; ++b) {
      for (int o = 0; o < 2; ++o) {
        const double prev = o == 0 ? slow.states[t].psi_x[b] : slow.states[t].psi_y[b];
        const double next = o == 0 ? slow.states[t + 1].psi_x[b] : slow.states[t + 1].psi_y[b];
        if (!std::isfinite(prev)) continue;
        if (prev >= 1e-3) {
          CHECK(next <= prev + 1e-7);
        } else {
          CHECK(next < 1e-2);
        }
      }
    }
  }

  // dropping the cross-terminal channel can only increase the predicted error
  for (int t : {5, 20, 50}) {
    const Eigen::VectorXd s_x = inflow(w, slow.states[t].phi_x);
    for (Eigen::Index b = 0; b < 8; ++b) {
      const double solo = sampler.mmse2(s_x[b], 0.0).first;
      CHECK(slow.states[t + 1].psi_x[b] <= solo + 5e-3);
    }
  }
}

TEST_CASE("undersampling one terminal stalls its wave while the other sweeps") {
  const mtcs::SourceSpec spec = testspec::chain();
  const mtcs::MmseSampler sampler(spec, 50000, 11);
  const auto w = mtcs::build_weight_matrix(8, 1, 2, 1.0);

  const auto run = mtcs::coupled_se_run(w, {0.60, 0.22, 0.0, 0.0}, 300, sampler);
  CHECK(!run.recovered);
  const auto& last = run.states.back();
  CHECK(last.psi_x.maxCoeff() < 1e-4);

  // the stuck second-terminal blocks form one contiguous unseeded stretch
  int first = -1, count = 0;
  for (Eigen::Index b = 0; b < 8; ++b) {
    if (last.psi_y[b] >= 1e-4) {
      if (first < 0) first = static_cast<int>(b);
      ++count;
    }
  }
  REQUIRE(count > 0);
  CHECK(first == 2);
  CHECK(count == 6);
  for (Eigen::Index b = first; b < first + count; ++b) CHECK(last.psi_y[b] >= 1e-4);

  // and the stall is a fixed point, not a slow crawl
  const auto& prev = run.states[run.states.size() - 51];
  for (Eigen::Index b = 0; b < 8; ++b) {
    CHECK(std::abs(last.psi_y[b] - prev.psi_y[b]) < 1e-4);
  }
}

TEST_CASE("swapping the terminal rates mirrors the wave for a symmetric source") {
  const mtcs::SourceSpec spec = testspec::chain();
  const mtcs::MmseSampler sampler(spec, 50000, 11);
  const auto w = mtcs::build_weight_matrix(8, 1, 2, 1.0);

  const auto xy = mtcs::coupled_se_run(w, {0.60, 0.40, 0.0, 0.0}, 200, sampler);
  const auto yx = mtcs::coupled_se_run(w, {0.40, 0.60, 0.0, 0.0}, 200, sampler);
  CHECK(xy.recovered);
  CHECK(yx.recovered);
  CHECK(std::abs(xy.recovered_at - yx.recovered_at) <= 15);
}

TEST_CASE("message passing follows the predicted wave order and tracks block errors") {
  const mtcs::SourceSpec spec = testspec::chain();
  const mtcs::MmseSampler sampler(spec, 50000, 11);
  const auto w = mtcs::build_weight_matrix(8, 1, 2, 1.0);
  const int lc = 8;

  const auto se = mtcs::coupled_se_run(w, {0.90, 0.75, 0.0, 0.0}, 120, sampler);
  REQUIRE(se.recovered);

  std::vector<int> t_se(lc, -1);
  for (int b = 0; b < lc; ++b) {
    for (size_t t = 0; t < se.states.size(); ++t) {
      if (std::max(se.states[t].psi_x[b], se.states[t].psi_y[b]) < 1e-2) {
        t_se[b] = static_cast<int>(t);
        break;
      }
    }
  }

  double concordance_sum = 0.0;
  std::vector<double> rel_errs;
  for (unsigned seed = 21; seed <= 25; ++seed) {
    const auto a = mtcs::build_coupled_ensemble(w, 360, 400, seed);
    const auto b = mtcs::build_coupled_ensemble(w, 300, 400, seed + 1000);
    const Eigen::MatrixXd truth = mtcs::sample_source(spec, a.n(), seed + 2000);
    const Eigen::VectorXd u = mtcs::measure_matrix(a.matrix, truth.row(0), 0.0, seed + 3000, 0);
    const Eigen::VectorXd v = mtcs::measure_matrix(b.matrix, truth.row(1), 0.0, seed + 3000, 1);
    const auto run = mtcs::coupled_mamp_run(a, b, u, v, spec, se.states, 16, 1e-12, &truth);
    const auto& its = run.trace.iterations;

    // iteration i estimates line up with psi(i + 2)
    for (int i = 2; i <= 10; ++i) {
      for (int o = 0; o < 2; ++o) {
        const Eigen::VectorXd& psi = o == 0 ? se.states[i + 2].psi_x : se.states[i + 2].psi_y;
        const Eigen::VectorXd& emp = o == 0 ? its[i].block_mse_x : its[i].block_mse_y;
        for (int c = 0; c < lc; ++c) {
          if (psi[c] >= 5e-3) rel_errs.push_back(std::abs(emp[c] - psi[c]) / psi[c]);
          if (psi[c] < 1e-3) CHECK(emp[c] < 5e-3);
        }
      }
    }

    std::vector<int> t_emp(lc, -1);
    for (int c = 0; c < lc; ++c) {
      for (size_t i = 0; i < its.size(); ++i) {
        if (std::max(its[i].block_mse_x[c], its[i].block_mse_y[c]) < 1e-2) {
          t_emp[c] = static_cast<int>(i);
          break;
        }
      }
      CHECK(t_emp[c] >= 0);
    }

    int concordant = 0, comparable = 0;
    for (int c = 0; c < lc; ++c) {
      for (int d = c + 1; d < lc; ++d) {
        if (t_se[c] == t_se[d] || t_emp[c] < 0 || t_emp[d] < 0) continue;
        ++comparable;
        const bool se_less = t_se[c] < t_se[d];
        if (se_less ? t_emp[c] <= t_emp[d] : t_emp[d] <= t_emp[c]) ++concordant;
      }
    }
    REQUIRE(comparable > 0);
    concordance_sum += static_cast<double>(concordant) / comparable;
  }
  CHECK(concordance_sum / 5.0 >= 0.9);

  REQUIRE(!rel_errs.empty());
  std::sort(rel_errs.begin(), rel_errs.end());
  CHECK(rel_errs[rel_errs.size() / 2] <= 0.20);
}

TEST_CASE("phase boundary search brackets the wave threshold") {
  const mtcs::SourceSpec spec = testspec::chain();
  const mtcs::MmseSampler sampler(spec, 20000, 11);
  const auto w = mtcs::build_weight_matrix(8, 1, 2, 1.0);

  const auto points =
      mtcs::phase_boundary_search(w, {0.65}, 0.30, 0.55, 0.0, 0.0, 150, sampler, 1e-4, 0.01);
  REQUIRE(points.size() == 1);
  const auto& p = points[0];
  CHECK(p.delta_x == 0.65);
  CHECK(!p.anomaly);
  CHECK(p.converged_t > 0);
  CHECK(p.delta_y_boundary > 0.34);
  CHECK(p.delta_y_boundary < 0.40);

  // the bisected edge really separates recovery from failure
  const auto above = mtcs::coupled_se_run(w, {0.65, p.delta_y_boundary + 0.02, 0.0, 0.0}, 150,
                                          sampler);
  CHECK(above.recovered);
  const auto below = mtcs::coupled_se_run(w, {0.65, p.delta_y_boundary - 0.02, 0.0, 0.0}, 150,
                                          sampler);
  CHECK(!below.recovered);

  // bracket failures are flagged, not resolved
  const auto stuck =
      mtcs::phase_boundary_search(w, {0.65}, 0.20, 0.28, 0.0, 0.0, 100, sampler, 1e-4, 0.01);
  REQUIRE(stuck.size() == 1);
  CHECK(stuck[0].anomaly);
  CHECK(std::isnan(stuck[0].delta_y_boundary));

  const auto loose =
      mtcs::phase_boundary_search(w, {0.65}, 0.45, 0.55, 0.0, 0.0, 150, sampler, 1e-4, 0.01);
  REQUIRE(loose.size() == 1);
  CHECK(loose[0].anomaly);
  CHECK(loose[0].delta_y_boundary == 0.45);

  CHECK_THROWS_AS(mtcs::phase_boundary_search(w, {}, 0.3, 0.5, 0.0, 0.0, 50, sampler),
                  std::invalid_argument);
  CHECK_THROWS_AS(mtcs::phase_boundary_search(w, {0.5}, 0.5, 0.3, 0.0, 0.0, 50, sampler),
                  std::invalid_argument);
}
