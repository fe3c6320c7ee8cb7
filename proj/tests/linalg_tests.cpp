#include "doctest.h"

#include <algorithm>
#include <set>

#include "dfmm/linalg.hpp"
#include "dfmm/rng.hpp"

using namespace dfmm;
using Eigen::MatrixXcd;

namespace {

MatrixXcd random_matrix(CounterRng& rng, int m, int n) {
  MatrixXcd a(m, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < m; ++i) a(i, j) = cplx(rng.normal(), rng.normal());
  return a;
}

}  // namespace

TEST_SUITE("linalg") {

TEST_CASE("pivot selection recovers the numerical rank") {
  CounterRng rng("linalg-rank", 1);
  const int m = 60, n = 40, r = 7;
  MatrixXcd a = random_matrix(rng, m, r) * random_matrix(rng, r, n);
  auto cols = cpqr_select(a, 1e-10, n);
  CHECK(cols.size() == r);

  std::set<int> uniq(cols.begin(), cols.end());
  CHECK(uniq.size() == cols.size());
  for (int c : cols) {
    CHECK(c >= 0);
    CHECK(c < n);
  }

  // selected columns span the rest
  MatrixXcd basis(m, r);
  for (int j = 0; j < r; ++j) basis.col(j) = a.col(cols[j]);
  MatrixXcd resid = a - basis * reg_pinv(basis, 1e-13) * a;
  CHECK(resid.norm() <= 1e-8 * a.norm());
}

TEST_CASE("pivots come out most significant first") {
  CounterRng rng("linalg-order", 2);
  MatrixXcd a = random_matrix(rng, 30, 10);
  a.col(3) *= 100.0;
  a.col(7) *= 10.0;
  auto cols = cpqr_select(a, 1e-14, 10);
  REQUIRE(cols.size() >= 2);
  CHECK(cols[0] == 3);
  CHECK(cols[1] == 7);
}

TEST_CASE("max_rank truncates and min_rank forces pivots") {
  CounterRng rng("linalg-bounds", 3);
  MatrixXcd a = random_matrix(rng, 40, 20);
  CHECK(cpqr_select(a, 1e-14, 5).size() == 5);

  // rank-1 matrix still yields 4 pivots when forced
  MatrixXcd r1 = random_matrix(rng, 40, 1) * random_matrix(rng, 1, 20);
  CHECK(cpqr_select(r1, 1e-10, 20).size() == 1);
  CHECK(cpqr_select(r1, 1e-10, 20, 4).size() == 4);
}

TEST_CASE("loose tolerance selects fewer columns") {
  CounterRng rng("linalg-tol", 4);
  // geometrically decaying spectrum
  MatrixXcd a = random_matrix(rng, 50, 30);
  Eigen::JacobiSVD<MatrixXcd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::VectorXd s(30);
  for (int i = 0; i < 30; ++i) s(i) = std::pow(10.0, -0.5 * i);
  a = svd.matrixU() * s.asDiagonal() * svd.matrixV().adjoint();

  const auto coarse = cpqr_select(a, 1e-3, 30);
  const auto fine = cpqr_select(a, 1e-9, 30);
  CHECK(coarse.size() < fine.size());
  CHECK(fine.size() < 30);  // spectrum bottoms out near machine precision
}

TEST_CASE("pseudo-inverse satisfies the projection identities") {
  CounterRng rng("linalg-pinv", 5);
  for (auto [m, n] : {std::pair{30, 18}, std::pair{18, 30}}) {
    MatrixXcd a = random_matrix(rng, m, 8) * random_matrix(rng, 8, n);
    MatrixXcd p = reg_pinv(a, 1e-12);
    REQUIRE(p.rows() == n);
    REQUIRE(p.cols() == m);
    CHECK((a * p * a - a).norm() <= 1e-9 * a.norm());
    CHECK((p * a * p - p).norm() <= 1e-9 * p.norm());
  }
}

TEST_CASE("pseudo-inverse floor caps the amplification") {
  MatrixXcd a = MatrixXcd::Zero(4, 4);
  a(0, 0) = 1.0;
  a(1, 1) = 1e-3;
  a(2, 2) = 1e-9;  // below the floor: dropped, not inverted
  MatrixXcd p = reg_pinv(a, 1e-6);
  CHECK(std::abs(p(0, 0) - 1.0) <= 1e-12);
  CHECK(std::abs(p(1, 1) - 1e3) <= 1e-6);
  CHECK(std::abs(p(2, 2)) <= 1.0);
  CHECK(std::abs(p(3, 3)) == 0.0);
}

}  // TEST_SUITE
