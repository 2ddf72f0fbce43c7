#include "jsmean/errors.h"
#include "jsmean/linalg.h"
#include "jsmean/rng.h"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace jsmean;

namespace {

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

Matrix random_gram(int rows, int p, std::uint64_t seed) {
  NormalStream ns(seed);
  const Matrix y = ns.matrix(rows, p);
  return y.transpose() * y;
}

}  // namespace

TEST_CASE("pinv of the identity is the identity") {
  const PinvResult r = pinv(Matrix::Identity(3, 3));
  CHECK(r.rank == 3);
  CHECK(max_abs(r.pinv - Matrix::Identity(3, 3)) < 1e-15);
  CHECK(r.singular_values == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("pinv of a diagonal matrix inverts the nonzero entries") {
  Matrix d = Matrix::Zero(3, 3);
  d(0, 0) = 2.0;
  const PinvResult r = pinv(d);
  CHECK(r.rank == 1);
  Matrix expected = Matrix::Zero(3, 3);
  expected(0, 0) = 0.5;
  CHECK(max_abs(r.pinv - expected) < 1e-15);
}

TEST_CASE("pinv of a rank-2 Gram matrix satisfies the Penrose axioms") {
  NormalStream ns(7);
  const Matrix y = ns.matrix(2, 4);
  const Matrix s = y.transpose() * y;
  const PinvResult r = pinv(s, std::nullopt, 4);
  CHECK(r.rank == 2);
  for (double res : penrose_residuals(s, r.pinv)) CHECK(res < 1e-10);
  CHECK(std::abs((s * r.pinv).trace() - r.rank) < 10 * r.tol_used + 1e-12);
}

TEST_CASE("pinv of an invertible matrix is its inverse") {
  const Matrix s = random_gram(8, 4, 11);
  const PinvResult r = pinv(s);
  CHECK(r.rank == 4);
  CHECK(max_abs(r.pinv - s.inverse()) < 1e-10 * max_abs(s.inverse()));
}

TEST_CASE("pinv of the zero matrix is zero with rank 0") {
  const PinvResult r = pinv(Matrix::Zero(3, 3));
  CHECK(r.rank == 0);
  CHECK(r.pinv.isZero(0.0));
  CHECK(r.tol_used > 0.0);
  for (double res : penrose_residuals(Matrix::Zero(3, 3), r.pinv)) CHECK(res == 0.0);
}

TEST_CASE("pinv rejects non-finite and asymmetric input") {
  Matrix m = Matrix::Identity(2, 2);
  m(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(pinv(m), InvalidInput);
  Matrix a = Matrix::Identity(2, 2);
  a(0, 1) = 1e-3;
  CHECK_THROWS_AS(pinv(a), InvalidInput);
  CHECK_THROWS_AS(pinv(Matrix::Identity(2, 2), -1.0), InvalidInput);
  CHECK_THROWS_AS(pinv(Matrix::Zero(2, 3)), InvalidInput);
}

TEST_CASE("pinv tolerates asymmetry at rounding level") {
  Matrix s = random_gram(3, 5, 3);
  s(0, 1) += 1e-14 * s(0, 1);
  CHECK_NOTHROW(pinv(s));
}

TEST_CASE("pinv honours an explicit tolerance") {
  Matrix d = Matrix::Zero(3, 3);
  d(0, 0) = 1.0;
  d(1, 1) = 1e-6;
  CHECK(pinv(d).rank == 2);
  const PinvResult r = pinv(d, 1e-3);
  CHECK(r.rank == 1);
  CHECK(r.tol_used == 1e-3);
}

TEST_CASE("pinv is an involution, scales as 1/c, and its largest eigenvalue is below the trace") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const int p = 3 + static_cast<int>(seed % 6);
    const int rows = 1 + static_cast<int>(seed % 4);
    const Matrix s = random_gram(rows, p, 100 + seed);
    const PinvResult r = pinv(s, std::nullopt, std::max(p, rows));
    const PinvResult back = pinv(r.pinv, std::nullopt, std::max(p, rows));
    CHECK(max_abs(back.pinv - s) < 1e-8 * (1.0 + max_abs(s)));
    const double c = 3.7;
    const PinvResult scaled = pinv(c * s, std::nullopt, std::max(p, rows));
    CHECK(max_abs(scaled.pinv - r.pinv / c) < 1e-9 * (1.0 + max_abs(r.pinv)));
    CHECK(r.singular_values.front() <= s.trace() * (1.0 + 1e-12));
  }
}

TEST_CASE("spd_sqrt of the identity and of a diagonal") {
  const SpdSqrtResult i = spd_sqrt(Matrix::Identity(4, 4));
  CHECK(max_abs(i.a - Matrix::Identity(4, 4)) < 1e-15);
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 4.0;
  d(1, 1) = 9.0;
  const SpdSqrtResult r = spd_sqrt(d);
  CHECK(r.a(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(r.a(1, 1) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(std::abs(r.a(0, 1)) < 1e-15);
}

TEST_CASE("spd_sqrt of e e^T + 3I reconstructs Sigma and matches the spectral formula") {
  const Matrix sigma = Matrix::Ones(2, 2) + 3.0 * Matrix::Identity(2, 2);
  const SpdSqrtResult r = spd_sqrt(sigma);
  CHECK(max_abs(r.a * r.a - sigma) < 1e-12);
  CHECK(max_abs(r.a * r.a_inv - Matrix::Identity(2, 2)) < 1e-12);
  CHECK(max_abs(r.a - r.a.transpose()) == 0.0);
  // sqrt(5) on span(e), sqrt(3) on its complement.
  CHECK(r.a(0, 0) == doctest::Approx(1.98405939253433349).epsilon(1e-14));
  CHECK(r.a(0, 1) == doctest::Approx(0.252008584965456201).epsilon(1e-13));
  CHECK(r.a_inv(0, 0) == doctest::Approx(0.512281932344791852).epsilon(1e-14));
  CHECK(r.a_inv(0, 1) == doctest::Approx(-0.0650683368448339126).epsilon(1e-13));
}

TEST_CASE("spd_sqrt rejects singular and indefinite matrices") {
  Matrix s = Matrix::Zero(2, 2);
  s(0, 0) = 1.0;
  CHECK_THROWS_AS(spd_sqrt(s), NotPositiveDefinite);
  Matrix ind = Matrix::Identity(2, 2);
  ind(1, 1) = -1.0;
  CHECK_THROWS_AS(spd_sqrt(ind), NotPositiveDefinite);
}

TEST_CASE("numerical_rank counts values above the tolerance") {
  CHECK(numerical_rank({3.0, 1.0, 0.0}, 1e-8) == 2);
  CHECK(numerical_rank({0.0, 0.0}, 1e-8) == 0);
  CHECK(numerical_rank({}, 1e-8) == 0);
}

TEST_CASE("principal_submatrix_inverse_trace") {
  CHECK(principal_submatrix_inverse_trace(Matrix::Identity(5, 5), 3) == doctest::Approx(3.0));
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 2.0;
  d(1, 1) = 4.0;
  CHECK(principal_submatrix_inverse_trace(d, 2) == doctest::Approx(0.75).epsilon(1e-15));
  // [[4,1],[1,4]]^{-1} = [[4,-1],[-1,4]] / 15.
  const Matrix c = Matrix::Ones(3, 3) + 3.0 * Matrix::Identity(3, 3);
  CHECK(principal_submatrix_inverse_trace(c, 2) == doctest::Approx(8.0 / 15.0).epsilon(1e-15));
  CHECK_THROWS_AS(principal_submatrix_inverse_trace(c, 0), InvalidInput);
  CHECK_THROWS_AS(principal_submatrix_inverse_trace(c, 4), InvalidInput);
  Matrix sing = Matrix::Identity(3, 3);
  sing(1, 1) = 0.0;
  CHECK_THROWS_AS(principal_submatrix_inverse_trace(sing, 2), NotPositiveDefinite);
  CHECK(principal_submatrix_inverse_trace(sing, 1) == doctest::Approx(1.0));
}

TEST_CASE("tr(A^2) <= (tr A)^2 for random PSD matrices") {
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const int p = 1 + static_cast<int>(seed % 9);
    const Matrix a = random_gram(1 + static_cast<int>(seed % 5), p, 1000 + seed);
    CHECK(trace_of_product(a, a) <= a.trace() * a.trace() * (1.0 + 1e-12));
  }
}

TEST_CASE("trace_of_product and vec") {
  NormalStream ns(5);
  const Matrix a = ns.matrix(3, 4);
  const Matrix b = ns.matrix(4, 3);
  CHECK(trace_of_product(a, b) == doctest::Approx((a * b).trace()).epsilon(1e-14));
  CHECK_THROWS_AS(trace_of_product(a, a), InvalidInput);
  const Vector v = vec(a);
  CHECK(v.size() == 12);
  CHECK(v(1) == a(1, 0));
  CHECK(v(3) == a(0, 1));
}

TEST_CASE("default_rank_tolerance is positive even for a zero spectrum") {
  CHECK(default_rank_tolerance(0.0, 4) > 0.0);
  CHECK(default_rank_tolerance(2.0, 10) == doctest::Approx(2.0 * 10 * std::numeric_limits<double>::epsilon()));
}

TEST_CASE("penrose_residuals detect a perturbed pseudoinverse") {
  Matrix s(3, 3);
  s << 4, 1, 0, 1, 3, 1, 0, 1, 2;
  const Matrix good = pinv(s).pinv;
  for (double r : penrose_residuals(s, good)) CHECK(r < 1e-15);
  const auto scaled = penrose_residuals(s, 1.0001 * good);
  CHECK(*std::max_element(scaled.begin(), scaled.end()) > 1e-6);
  Matrix skew = good;
  skew(0, 1) += 1e-4;
  const auto sk = penrose_residuals(s, skew);
  CHECK(*std::max_element(sk.begin(), sk.end()) > 1e-6);
}
