#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mtcs/source.hpp"
#include "oracles.hpp"
#include "specs.hpp"

using mtcs::SourceSpec;

TEST_CASE("validate_spec rejects malformed specs") {
  CHECK_THROWS_AS(mtcs::validate_spec(SourceSpec{}), std::invalid_argument);

  SourceSpec bad_alpha = testspec::chain();
  bad_alpha.alphas[1] = 0.0;
  CHECK_THROWS_AS(mtcs::validate_spec(bad_alpha), std::invalid_argument);
  bad_alpha.alphas[1] = 1.5;
  CHECK_THROWS_AS(mtcs::validate_spec(bad_alpha), std::invalid_argument);

  SourceSpec zero_row = testspec::chain();
  zero_row.mixing.row(1).setZero();
  CHECK_THROWS_AS(mtcs::validate_spec(zero_row), std::invalid_argument);

  SourceSpec nonfinite = testspec::chain();
  nonfinite.mixing(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(mtcs::validate_spec(nonfinite), std::invalid_argument);

  CHECK_NOTHROW(mtcs::validate_spec(testspec::chain()));
}

TEST_CASE("sample_source is deterministic and rejects n = 0") {
  const SourceSpec spec = testspec::chain();
  CHECK_THROWS_AS(mtcs::sample_source(spec, 0, 1), std::invalid_argument);
  const Eigen::MatrixXd a = mtcs::sample_source(spec, 64, 7);
  const Eigen::MatrixXd b = mtcs::sample_source(spec, 64, 7);
  CHECK(a == b);
  const Eigen::MatrixXd c = mtcs::sample_source(spec, 64, 8);
  CHECK(a != c);
}

TEST_CASE("fully dense alphas leave no exact zeros") {
  SourceSpec spec;
  spec.mixing.resize(2, 3);
  spec.mixing << 1, 0, 0, 0, 1, 0.5;
  spec.alphas.resize(3);
  spec.alphas << 1.0, 1.0, 1.0;
  const Eigen::MatrixXd s = mtcs::sample_source(spec, 100000, 3);
  CHECK((s.array() == 0.0).count() == 0);
}

TEST_CASE("sampled atom weight and variance match the analytic law") {
  const SourceSpec spec = testspec::chain();
  const Eigen::Index n = 100000;
  const Eigen::MatrixXd s = mtcs::sample_source(spec, n, 11);

  const double zero_frac =
      static_cast<double>((s.row(0).array() == 0.0).count()) / static_cast<double>(n);
  const double p0 = 0.8 * 0.7;
  const double se_frac = std::sqrt(p0 * (1.0 - p0) / static_cast<double>(n));
  CHECK(std::abs(zero_frac - p0) < 3.0 * se_frac);

  const double var_x = s.row(0).squaredNorm() / static_cast<double>(n);
  // E X^4 = 3/a1 + 6 + 3/a2 = 31, so Var(X^2) = 31 - 4 = 27.
  const double se_var = std::sqrt(27.0 / static_cast<double>(n));
  CHECK(std::abs(var_x - 2.0) < 3.0 * se_var);

  const double cov_xy = s.row(0).dot(s.row(1)) / static_cast<double>(n);
  CHECK(std::abs(cov_xy - 1.0) < 0.1);
}

TEST_CASE("source_covariance is the mixing gram matrix") {
  SourceSpec spec = testspec::chain();
  Eigen::MatrixXd expected(2, 2);
  expected << 2, 1, 1, 2;
  CHECK(mtcs::source_covariance(spec) == expected);

  spec.mixing.resize(2, 2);
  spec.mixing << 2, 0, 0, 3;
  spec.alphas.resize(2);
  spec.alphas << 0.5, 0.5;
  Eigen::MatrixXd diag(2, 2);
  diag << 4, 0, 0, 9;
  CHECK(mtcs::source_covariance(spec) == diag);

  spec.mixing << 1, 0, 0, 1;
  CHECK(mtcs::source_covariance(spec) == Eigen::MatrixXd::Identity(2, 2));
}

TEST_CASE("information dimension of the chain source matches the hand computation") {
  const SourceSpec spec = testspec::chain();
  CHECK(mtcs::rid(spec, {0}) == doctest::Approx(0.44).epsilon(1e-12));
  CHECK(mtcs::rid(spec, {1}) == doctest::Approx(0.44).epsilon(1e-12));
  CHECK(mtcs::rid(spec, {0, 1}) == doctest::Approx(0.688).epsilon(1e-12));
  CHECK(mtcs::rid_conditional(spec, {0}, {1}) == doctest::Approx(0.248).epsilon(1e-12));
  CHECK(mtcs::rid_conditional(spec, {1}, {0}) == doctest::Approx(0.248).epsilon(1e-12));
}

TEST_CASE("information dimension limit cases") {
  SourceSpec dense;
  dense.mixing.resize(2, 2);
  dense.mixing << 1, 2, 3, 4;
  dense.alphas.resize(2);
  dense.alphas << 1.0, 1.0;
  CHECK(mtcs::rid(dense, {0, 1}) == doctest::Approx(2.0).epsilon(1e-12));

  const SourceSpec indep = testspec::independent(0.3, 0.6);
  CHECK(mtcs::rid_conditional(indep, {0}, {1}) ==
        doctest::Approx(mtcs::rid(indep, {0})).epsilon(1e-12));

  const SourceSpec same = testspec::identical(0.4);
  CHECK(mtcs::rid_conditional(same, {0}, {1}) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(mtcs::rid(same, {0}) == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("tuned chain family hits requested conditional dimensions") {
  // d(X|Y) = 1.44 a - a^2 once b = 1 - 0.56/(1-a) pins d(X) = 0.44.
  const SourceSpec mid = testspec::chain_family(0.1384503461);
  CHECK(mtcs::rid(mid, {0}) == doctest::Approx(0.44).epsilon(1e-9));
  CHECK(mtcs::rid_conditional(mid, {0}, {1}) == doctest::Approx(0.1802).epsilon(1e-8));

  const SourceSpec high = testspec::chain_family(0.0667006812);
  CHECK(mtcs::rid(high, {0}) == doctest::Approx(0.44).epsilon(1e-9));
  CHECK(mtcs::rid_conditional(high, {0}, {1}) == doctest::Approx(0.0916).epsilon(1e-8));
}

TEST_CASE("information dimension is monotone in the row subset") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const SourceSpec spec = testspec::random_spec(seed, 4);
    const double dx = mtcs::rid(spec, {0});
    const double dy = mtcs::rid(spec, {1});
    const double dxy = mtcs::rid(spec, {0, 1});
    CHECK(dx <= dxy + 1e-12);
    CHECK(dy <= dxy + 1e-12);
    CHECK(dxy <= dx + dy + 1e-12);
    CHECK(dx >= 0.0);
    CHECK(dx <= 1.0 + 1e-12);
  }
}

TEST_CASE("exact enumeration agrees with the sampling estimate") {
  for (std::uint64_t seed = 2; seed <= 4; ++seed) {
    const SourceSpec spec = testspec::random_spec(seed, 4);
    for (const std::vector<int>& rows : {std::vector<int>{0}, std::vector<int>{0, 1}}) {
      const double exact = mtcs::rid(spec, rows);
      const oracle::McEstimate mc = oracle::mc_rid(spec, rows, 200000, seed * 31 + 1);
      CHECK(std::abs(exact - mc.value) < 3.0 * mc.stderr_value + 1e-9);
    }
  }
}

TEST_CASE("near-parallel columns collapse to one rank unit") {
  SourceSpec spec;
  spec.mixing.resize(2, 2);
  spec.mixing << 1, 1, 1, 1 + 1e-12;
  spec.alphas.resize(2);
  spec.alphas << 1.0, 1.0;
  CHECK(mtcs::rid(spec, {0, 1}) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("rid rejects oversized enumeration and empty row sets") {
  SourceSpec spec;
  spec.mixing = Eigen::MatrixXd::Ones(2, 25);
  spec.alphas = Eigen::VectorXd::Constant(25, 0.5);
  CHECK_THROWS_AS(mtcs::rid(spec, {0}), std::invalid_argument);
  CHECK_THROWS_AS(mtcs::rid(testspec::chain(), {}), std::invalid_argument);
}
