#pragma once

#include "jsmean/linalg.h"
#include "jsmean/model.h"

#include <functional>
#include <optional>
#include <string>

namespace jsmean {

struct ShrinkageFunction {
  std::string name;
  std::function<double(double)> eval;
  std::function<double(double)> deriv;
  double c1 = 0.0;                // sup r
  double c2 = 0.0;                // sup |r'|
  std::optional<double> c_star;   // inf r over t >= 0, when positive
  bool nondecreasing = false;
};

ShrinkageFunction sigmoid_r();
ShrinkageFunction scaled_sigmoid_r(double c_max);
ShrinkageFunction constant_r(double c);
ShrinkageFunction zero_r();

double compute_F(const Matrix& x, const Matrix& s_pinv);
double compute_F(const Matrix& x, const PinvResult& s_pinv);

// tr((X^T S+ X)^2); lies in [0, F^2].
double trace_squared_F(const Matrix& x, const Matrix& s_pinv);

// 2(q m - 2) / (nq + p - 2m + 3) with m = min(nq, p), clamped at 0.
double domination_bound(int p, int q, int n);

// q * min(nq, p) > 2, the almost-sure form of P(qR > 2) = 1.
bool rank_condition(int p, int q, int n);

struct EstimatorOutput {
  Matrix delta;
  double f = 0.0;
  int rank = 0;
  double shrink_factor = 0.0;  // r(F) / F
  bool degenerate = false;
};

// F at or below this multiple of tr(X^T X) is treated as zero.
inline constexpr double kDegeneracyFloor = 1e-12;

EstimatorOutput estimate(const Matrix& x, const Matrix& s, const ShrinkageFunction& r);
EstimatorOutput estimate(const Matrix& x, const Matrix& s, const PinvResult& s_pinv, const ShrinkageFunction& r);

struct DominationReport {
  bool rank_condition = false;
  bool bound_condition = false;
  bool monotone = false;
  bool deriv_bounded = false;
  bool corollary1_applies = false;
  bool corollary2_applies = false;
  bool overall = false;
  double bound = 0.0;
};

DominationReport check_domination_conditions(int p, int q, int n, const ShrinkageFunction& r);
DominationReport check_domination_conditions(const ModelSpec& spec, const ShrinkageFunction& r);

// tr((delta - theta)^T Sigma^{-1} (delta - theta)).
double loss(const Matrix& theta, const Matrix& delta, const Matrix& sigma);

// Loss with Sigma factored once.
class LossMetric {
 public:
  explicit LossMetric(const Matrix& sigma);
  double operator()(const Matrix& theta, const Matrix& delta) const;
  // tr(U^T Sigma^{-1} V).
  double inner(const Matrix& u, const Matrix& v) const;

 private:
  Eigen::LLT<Matrix> llt_;
};

}  // namespace jsmean
