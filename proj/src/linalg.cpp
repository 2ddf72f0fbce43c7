#include "jsmean/linalg.h"

#include "jsmean/errors.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace jsmean {
namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

void require_square_finite(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) {
    throw InvalidInput(std::string(what) + ": matrix must be square, got " +
                       std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
  if (!m.allFinite()) {
    throw InvalidInput(std::string(what) + ": matrix has non-finite entries");
  }
}

void require_symmetric(const Matrix& m, const char* what) {
  const double scale = m.cwiseAbs().maxCoeff();
  if (m.size() == 0 || scale == 0.0) return;
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * scale) {
    throw InvalidInput(std::string(what) + ": matrix is not symmetric (max |m - m^T| = " +
                       std::to_string(asym) + ")");
  }
}

}  // namespace

double default_rank_tolerance(double sigma_max, int dim) {
  const double tol = sigma_max * static_cast<double>(std::max(dim, 1)) * kEps;
  return std::max(tol, std::numeric_limits<double>::min());
}

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

PinvResult pinv(const Matrix& m, std::optional<double> tol, std::optional<int> dim_hint) {
  require_square_finite(m, "pinv");
  require_symmetric(m, "pinv");
  if (tol && !(*tol > 0.0)) throw InvalidInput("pinv: tolerance must be positive");

  const auto n = m.rows();
  PinvResult out;
  out.pinv = Matrix::Zero(n, n);
  if (n == 0) {
    out.tol_used = tol.value_or(std::numeric_limits<double>::min());
    return out;
  }

  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
  const Vector& lambda = es.eigenvalues();
  const Matrix& v = es.eigenvectors();

  out.singular_values.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) out.singular_values[i] = std::abs(lambda(i));
  std::sort(out.singular_values.begin(), out.singular_values.end(), std::greater<>());

  const double sigma_max = out.singular_values.front();
  out.tol_used = tol ? *tol : default_rank_tolerance(sigma_max, dim_hint.value_or(static_cast<int>(n)));
  out.rank = numerical_rank(out.singular_values, out.tol_used);

  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(lambda(i)) > out.tol_used) {
      out.pinv.noalias() += (1.0 / lambda(i)) * v.col(i) * v.col(i).transpose();
    }
  }
  out.pinv = symmetrize(out.pinv);
  return out;
}

std::vector<double> penrose_residuals(const Matrix& s, const Matrix& s_pinv) {
  const double ns = s.norm();
  const double np = s_pinv.norm();
  const Matrix ss = s * s_pinv;
  const Matrix ps = s_pinv * s;
  auto rel = [](double r, double scale) { return scale > 0.0 ? r / scale : r; };
  return {rel((ss * s - s).norm(), ns * np * ns), rel((ps * s_pinv - s_pinv).norm(), np * ns * np),
          rel((ss.transpose() - ss).norm(), ns * np), rel((ps.transpose() - ps).norm(), ns * np)};
}

SpdSqrtResult spd_sqrt(const Matrix& sigma) {
  require_square_finite(sigma, "spd_sqrt");
  require_symmetric(sigma, "spd_sqrt");
  const auto p = sigma.rows();
  if (p == 0) throw InvalidInput("spd_sqrt: empty matrix");

  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(sigma));
  const Vector& lambda = es.eigenvalues();
  const double lmax = lambda.cwiseAbs().maxCoeff();
  const double tol = default_rank_tolerance(lmax, static_cast<int>(p));
  if (!(lambda.minCoeff() > tol)) {
    throw NotPositiveDefinite("spd_sqrt: smallest eigenvalue " + std::to_string(lambda.minCoeff()) +
                              " is not above tolerance " + std::to_string(tol));
  }
  const Matrix& v = es.eigenvectors();
  const Vector root = lambda.cwiseSqrt();
  SpdSqrtResult out;
  out.a = symmetrize(v * root.asDiagonal() * v.transpose());
  out.a_inv = symmetrize(v * root.cwiseInverse().asDiagonal() * v.transpose());
  return out;
}

int numerical_rank(const std::vector<double>& singular_values, double tol) {
  return static_cast<int>(std::count_if(singular_values.begin(), singular_values.end(),
                                        [tol](double s) { return s > tol; }));
}

double principal_submatrix_inverse_trace(const Matrix& sigma, int j) {
  require_square_finite(sigma, "principal_submatrix_inverse_trace");
  if (j < 1 || j > sigma.rows()) {
    throw InvalidInput("principal_submatrix_inverse_trace: j=" + std::to_string(j) +
                       " outside 1.." + std::to_string(sigma.rows()));
  }
  const Matrix block = symmetrize(sigma.topLeftCorner(j, j));
  Eigen::LLT<Matrix> llt(block);
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefinite("principal_submatrix_inverse_trace: leading " + std::to_string(j) +
                              "x" + std::to_string(j) + " block is not positive definite");
  }
  return llt.solve(Matrix::Identity(j, j)).trace();
}

double trace_of_product(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows() || a.rows() != b.cols()) {
    throw InvalidInput("trace_of_product: incompatible shapes");
  }
  return a.cwiseProduct(b.transpose()).sum();
}

Vector vec(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

}  // namespace jsmean
