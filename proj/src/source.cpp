#include "mtcs/source.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mtcs {

void validate_spec(const SourceSpec& spec) {
  const Eigen::Index t = spec.terminals();
  const Eigen::Index k = spec.components();
  if (t < 1 || k < 1) throw std::invalid_argument("source spec: empty mixing matrix");
  if (spec.alphas.size() != k)
    throw std::invalid_argument("source spec: alphas length does not match mixing columns");
  if (!spec.mixing.allFinite())
    throw std::invalid_argument("source spec: non-finite mixing entry");
  for (Eigen::Index i = 0; i < k; ++i) {
    const double a = spec.alphas[i];
    if (!(a > 0.0) || a > 1.0)
      throw std::invalid_argument("source spec: alpha[" + std::to_string(i) +
                                  "] must lie in (0, 1]");
  }
  for (Eigen::Index r = 0; r < t; ++r) {
    if (spec.mixing.row(r).cwiseAbs().maxCoeff() == 0.0)
      throw std::invalid_argument("source spec: row " + std::to_string(r) +
                                  " of mixing is identically zero");
  }
}

Eigen::MatrixXd sample_source(const SourceSpec& spec, Eigen::Index n, std::uint64_t seed) {
  validate_spec(spec);
  if (n < 1) throw std::invalid_argument("sample_source: n must be positive");
  const Eigen::Index t = spec.terminals();
  const Eigen::Index k = spec.components();
  const RandomStream support(seed, kStreamSignalSupport);
  const RandomStream gauss(seed, kStreamSignalGauss);
  Eigen::VectorXd scale(k);
  for (Eigen::Index i = 0; i < k; ++i) scale[i] = std::sqrt(1.0 / spec.alphas[i]);

  Eigen::MatrixXd out(t, n);
#pragma omp parallel for schedule(static) if (n > 256)
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::VectorXd z(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      const std::uint64_t idx = static_cast<std::uint64_t>(j) * k + i;
      const bool active = support.uniform_at(idx) < spec.alphas[i];
      z[i] = active ? scale[i] * gauss.gaussian_at(idx) : 0.0;
    }
    out.col(j) = spec.mixing * z;
  }
  return out;
}

Eigen::MatrixXd source_covariance(const SourceSpec& spec) {
  validate_spec(spec);
  return spec.mixing * spec.mixing.transpose();
}

Eigen::Index matrix_rank(const Eigen::MatrixXd& m) {
  if (m.rows() == 0 || m.cols() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (sv.size() == 0 || sv[0] == 0.0) return 0;
  const double thresh = 1e-9 * sv[0];
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > thresh) ++rank;
  return rank;
}

namespace {

std::vector<int> checked_rows(const SourceSpec& spec, const std::vector<int>& rows) {
  if (rows.empty()) throw std::invalid_argument("rid: empty row selection");
  std::vector<int> sorted = rows;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (int r : sorted)
    if (r < 0 || r >= spec.terminals())
      throw std::invalid_argument("rid: row index out of range");
  return sorted;
}

}  // namespace

double rid(const SourceSpec& spec, const std::vector<int>& rows) {
  validate_spec(spec);
  const std::vector<int> sel = checked_rows(spec, rows);
  const int k = static_cast<int>(spec.components());
  if (k > kMaxEnumerationComponents)
    throw std::invalid_argument("rid: component count exceeds enumeration cap of 24");

  Eigen::MatrixXd sub(static_cast<Eigen::Index>(sel.size()), k);
  for (size_t r = 0; r < sel.size(); ++r) sub.row(static_cast<Eigen::Index>(r)) = spec.mixing.row(sel[r]);

  const std::uint32_t npat = 1u << k;
  // Fixed-size blocks keep the summation order independent of thread count.
  const std::uint32_t block = 4096;
  const std::uint32_t nblocks = (npat + block - 1) / block;
  std::vector<double> partial(nblocks, 0.0);

#pragma omp parallel for schedule(dynamic) if (npat > 8192)
  for (std::uint32_t b = 0; b < nblocks; ++b) {
    const std::uint32_t lo = b * block;
    const std::uint32_t hi = std::min(npat, lo + block);
    double acc = 0.0;
    Eigen::MatrixXd active(sub.rows(), k);
    for (std::uint32_t pat = lo; pat < hi; ++pat) {
      double prob = 1.0;
      Eigen::Index na = 0;
      for (int i = 0; i < k; ++i) {
        if (pat & (1u << i)) {
          prob *= spec.alphas[i];
          active.col(na++) = sub.col(i);
        } else {
          prob *= 1.0 - spec.alphas[i];
        }
      }
      if (prob == 0.0) continue;
      if (na > 0) acc += prob * static_cast<double>(matrix_rank(active.leftCols(na)));
    }
    partial[b] = acc;
  }

  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

double rid_conditional(const SourceSpec& spec, const std::vector<int>& rows_a,
                       const std::vector<int>& rows_b) {
  std::vector<int> joint = rows_a;
  joint.insert(joint.end(), rows_b.begin(), rows_b.end());
  return rid(spec, joint) - rid(spec, rows_b);
}

}  // namespace mtcs
