#pragma once

#include <Eigen/Dense>
#include <vector>

namespace dfmm {

using Eigen::MatrixXcd;
using Eigen::VectorXcd;

// Column-pivoted Householder QR that stops as soon as the residual column
// norm drops below rel_tol times the leading one (or at max_rank). Returns
// the original indices of the selected pivot columns, most significant
// first. min_rank forces at least that many pivots regardless of tolerance.
// Cost is O(m n r) for r selected columns, which is why Eigen's
// run-to-completion ColPivHouseholderQR is not used here.
std::vector<int> cpqr_select(MatrixXcd A, double rel_tol, int max_rank, int min_rank = 0);

// SVD pseudo-inverse dropping singular values below floor_rel * sigma_max.
MatrixXcd reg_pinv(const MatrixXcd& A, double floor_rel);

}  // namespace dfmm
