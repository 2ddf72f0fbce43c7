#pragma once

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace jsmean {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct PinvResult {
  Matrix pinv;
  int rank = 0;
  std::vector<double> singular_values;  // descending
  double tol_used = 0.0;
};

struct SpdSqrtResult {
  Matrix a;
  Matrix a_inv;
};

// Conventional SVD cutoff sigma_max * max(p, nq) * eps. Never returns zero.
double default_rank_tolerance(double sigma_max, int dim);

// Moore-Penrose pseudoinverse of a symmetric PSD matrix via eigendecomposition.
// When tol is absent the cutoff uses dim_hint (defaults to the matrix size);
// callers holding S = Y^T Y pass max(p, nq).
PinvResult pinv(const Matrix& m, std::optional<double> tol = std::nullopt,
                std::optional<int> dim_hint = std::nullopt);

// Penrose-axiom residuals in Frobenius norm, each divided by the product of the norms of
// its factors: [S S+ S - S, S+ S S+ - S+, (S S+)^T - S S+, (S+ S)^T - S+ S].
std::vector<double> penrose_residuals(const Matrix& s, const Matrix& s_pinv);

SpdSqrtResult spd_sqrt(const Matrix& sigma);

int numerical_rank(const std::vector<double>& singular_values, double tol);

// tr((Sigma_{1:j,1:j})^{-1}).
double principal_submatrix_inverse_trace(const Matrix& sigma, int j);

Matrix symmetrize(const Matrix& m);

// tr(A B) without forming the product.
double trace_of_product(const Matrix& a, const Matrix& b);

// Column-stacked vectorization.
Vector vec(const Matrix& m);

}  // namespace jsmean
