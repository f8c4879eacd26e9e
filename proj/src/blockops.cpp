#include "mtcs/blockops.hpp"

#include <stdexcept>

namespace mtcs::blockops {

namespace {

void check_shapes(const Eigen::MatrixXd& mat, Eigen::Index block_rows,
                  Eigen::Index block_cols, const Eigen::MatrixXd& mask) {
  if (block_rows < 1 || block_cols < 1 || mat.rows() != block_rows * mask.rows() ||
      mat.cols() != block_cols * mask.cols()) {
    throw std::invalid_argument("block shape does not tile the matrix");
  }
}

}  // namespace

void block_matvec(const Eigen::MatrixXd& mat, Eigen::Index block_rows,
                  Eigen::Index block_cols, const Eigen::MatrixXd& mask,
                  const Eigen::VectorXd& x, Eigen::VectorXd& out) {
  check_shapes(mat, block_rows, block_cols, mask);
  if (x.size() != mat.cols()) throw std::invalid_argument("block_matvec size mismatch");
  const Eigen::Index lr = mask.rows(), lc = mask.cols();
  out.resize(mat.rows());
#pragma omp parallel for schedule(static)
  for (Eigen::Index r = 0; r < lr; ++r) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(block_rows);
    for (Eigen::Index c = 0; c < lc; ++c) {
      if (mask(r, c) == 0.0) continue;
      acc.noalias() += mat.block(r * block_rows, c * block_cols, block_rows, block_cols) *
                       x.segment(c * block_cols, block_cols);
    }
    out.segment(r * block_rows, block_rows) = acc;
  }
}

void block_tmatvec_scaled(const Eigen::MatrixXd& mat, Eigen::Index block_rows,
                          Eigen::Index block_cols, const Eigen::MatrixXd& mask,
                          const Eigen::MatrixXd& scale, const Eigen::VectorXd& r_vec,
                          Eigen::VectorXd& out) {
  check_shapes(mat, block_rows, block_cols, mask);
  if (r_vec.size() != mat.rows() || scale.rows() != mask.rows() || scale.cols() != mask.cols()) {
    throw std::invalid_argument("block_tmatvec size mismatch");
  }
  const Eigen::Index lr = mask.rows(), lc = mask.cols();
  out.resize(mat.cols());
#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < lc; ++c) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(block_cols);
    for (Eigen::Index r = 0; r < lr; ++r) {
      if (mask(r, c) == 0.0) continue;
      acc.noalias() += scale(r, c) * (mat.block(r * block_rows, c * block_cols, block_rows,
                                                block_cols)
                                          .transpose() *
                                      r_vec.segment(r * block_rows, block_rows));
    }
    out.segment(c * block_cols, block_cols) = acc;
  }
}

}  // namespace mtcs::blockops
