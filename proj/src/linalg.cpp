#include "dfmm/linalg.hpp"

#include <cmath>

#include "dfmm/core.hpp"

namespace dfmm {

std::vector<int> cpqr_select(MatrixXcd A, double rel_tol, int max_rank, int min_rank) {
  const int m = static_cast<int>(A.rows());
  const int n = static_cast<int>(A.cols());
  const int lim = std::min({m, n, max_rank});

  Eigen::VectorXd norms2(n), exact2(n);
  for (int j = 0; j < n; ++j) exact2(j) = norms2(j) = A.col(j).squaredNorm();
  std::vector<int> perm(n);
  for (int j = 0; j < n; ++j) perm[j] = j;

  VectorXcd work(n);
  double beta0 = 0.0;
  int rank = 0;
  for (int k = 0; k < lim; ++k) {
    int jmax = k;
    for (int j = k + 1; j < n; ++j)
      if (norms2(j) > norms2(jmax)) jmax = j;
    double lead = std::sqrt(std::max(0.0, norms2(jmax)));
    if (k == 0) beta0 = lead;
    if (k >= min_rank && (lead <= rel_tol * beta0 || lead == 0.0)) break;

    if (jmax != k) {
      A.col(k).swap(A.col(jmax));
      std::swap(norms2(k), norms2(jmax));
      std::swap(exact2(k), exact2(jmax));
      std::swap(perm[k], perm[jmax]);
    }

    cplx tau;
    double beta;
    A.col(k).tail(m - k).makeHouseholderInPlace(tau, beta);
    A(k, k) = beta;
    if (k + 1 < n)
      A.bottomRightCorner(m - k, n - k - 1)
          .applyHouseholderOnTheLeft(A.col(k).tail(m - k - 1), tau, work.data());
    for (int j = k + 1; j < n; ++j) {
      norms2(j) -= std::norm(A(k, j));
      if (norms2(j) < 0.01 * exact2(j)) {
        norms2(j) = A.col(j).tail(m - k - 1).squaredNorm();
        exact2(j) = norms2(j);
      }
    }
    rank = k + 1;
  }
  return {perm.begin(), perm.begin() + rank};
}

MatrixXcd reg_pinv(const MatrixXcd& A, double floor_rel) {
  Eigen::JacobiSVD<MatrixXcd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) throw NumericalError("reg_pinv: zero matrix");
  const double floor = floor_rel * sv(0);
  Eigen::VectorXd inv(sv.size());
  int kept = 0;
  for (int i = 0; i < sv.size(); ++i) {
    if (sv(i) >= floor && sv(i) > 0.0) {
      inv(i) = 1.0 / sv(i);
      ++kept;
    } else {
      inv(i) = 0.0;
    }
  }
  if (kept == 0) throw NumericalError("reg_pinv: matrix entirely below regularization floor");
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().adjoint();
}

}  // namespace dfmm
