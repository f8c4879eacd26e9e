#pragma once

#include <Eigen/Dense>

namespace mtcs::blockops {

// Dense matrix partitioned into an L_r x L_c grid of M x N blocks. Blocks
// whose mask entry is zero are skipped entirely, so structurally zero blocks
// never contribute rounding noise. Accumulation order is fixed (ascending
// block index, Eigen kernels within a block), independent of thread count:
// the parallel loops write disjoint output segments.

// out = mat * x, restricted to masked blocks.
void block_matvec(const Eigen::MatrixXd& mat, Eigen::Index block_rows,
                  Eigen::Index block_cols, const Eigen::MatrixXd& mask,
                  const Eigen::VectorXd& x, Eigen::VectorXd& out);

// out_c = sum_r scale(r, c) * block(r, c)^T * r_seg, restricted to masked
// blocks. With a single all-ones block this is exactly mat^T * r.
void block_tmatvec_scaled(const Eigen::MatrixXd& mat, Eigen::Index block_rows,
                          Eigen::Index block_cols, const Eigen::MatrixXd& mask,
                          const Eigen::MatrixXd& scale, const Eigen::VectorXd& r,
                          Eigen::VectorXd& out);

}  // namespace mtcs::blockops
