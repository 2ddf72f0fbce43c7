#include "jsmean/shrinkage.h"

#include "jsmean/errors.h"

#include <algorithm>
#include <cmath>

namespace jsmean {
namespace {

double logistic(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace

ShrinkageFunction sigmoid_r() { return scaled_sigmoid_r(1.0); }

ShrinkageFunction scaled_sigmoid_r(double c_max) {
  if (!(c_max > 0.0) || !std::isfinite(c_max)) {
    throw InvalidInput("scaled_sigmoid_r: c_max must be positive and finite");
  }
  ShrinkageFunction r;
  r.name = c_max == 1.0 ? "sigmoid" : "scaled_sigmoid";
  r.eval = [c_max](double t) { return c_max * logistic(t); };
  r.deriv = [c_max](double t) {
    const double s = logistic(t);
    return c_max * s * (1.0 - s);
  };
  r.c1 = c_max;
  r.c2 = c_max / 4.0;
  r.c_star = c_max / 2.0;
  r.nondecreasing = true;
  return r;
}

ShrinkageFunction constant_r(double c) {
  if (!(c >= 0.0) || !std::isfinite(c)) throw InvalidInput("constant_r: c must be finite and >= 0");
  ShrinkageFunction r;
  r.name = c == 0.0 ? "zero" : "constant";
  r.eval = [c](double) { return c; };
  r.deriv = [](double) { return 0.0; };
  r.c1 = c;
  r.c2 = 0.0;
  if (c > 0.0) r.c_star = c;
  r.nondecreasing = true;
  return r;
}

ShrinkageFunction zero_r() { return constant_r(0.0); }

double compute_F(const Matrix& x, const Matrix& s_pinv) {
  if (s_pinv.rows() != x.rows() || s_pinv.cols() != x.rows()) {
    throw InvalidInput("compute_F: S+ must be p x p with p = rows of X");
  }
  return std::max(0.0, x.cwiseProduct(s_pinv * x).sum());
}

double compute_F(const Matrix& x, const PinvResult& s_pinv) { return compute_F(x, s_pinv.pinv); }

double trace_squared_F(const Matrix& x, const Matrix& s_pinv) {
  const Matrix k = x.transpose() * s_pinv * x;
  return k.cwiseProduct(k.transpose()).sum();
}

double domination_bound(int p, int q, int n) {
  if (p < 1 || q < 1 || n < 1) throw InvalidInput("domination_bound: p, q, n must be >= 1");
  const long nq = static_cast<long>(n) * q;
  const long m = std::min<long>(nq, p);
  const double num = 2.0 * static_cast<double>(q * m - 2);
  const double den = static_cast<double>(nq + p - 2 * m + 3);
  return std::max(0.0, num / den);
}

bool rank_condition(int p, int q, int n) {
  const long m = std::min<long>(static_cast<long>(n) * q, p);
  return q * m > 2;
}

EstimatorOutput estimate(const Matrix& x, const Matrix& s, const ShrinkageFunction& r) {
  if (s.rows() != x.rows() || s.cols() != x.rows()) {
    throw InvalidInput("estimate: S must be p x p with p = rows of X (" + std::to_string(x.rows()) + ")");
  }
  return estimate(x, s, pinv(s), r);
}

EstimatorOutput estimate(const Matrix& x, const Matrix& s, const PinvResult& s_pinv, const ShrinkageFunction& r) {
  if (s.rows() != x.rows() || s.cols() != x.rows() || s_pinv.pinv.rows() != x.rows()) {
    throw InvalidInput("estimate: S and S+ must be p x p with p = rows of X (" + std::to_string(x.rows()) + ")");
  }
  if (!x.allFinite()) throw InvalidInput("estimate: X has non-finite entries");
  EstimatorOutput out;
  out.f = compute_F(x, s_pinv);
  out.rank = s_pinv.rank;
  const double xx = x.squaredNorm();
  if (xx == 0.0 || out.f <= kDegeneracyFloor * xx) {
    out.delta = x;
    out.degenerate = true;
    return out;
  }
  out.shrink_factor = r.eval(out.f) / out.f;
  out.delta = x - out.shrink_factor * ((s * s_pinv.pinv) * x);
  return out;
}

DominationReport check_domination_conditions(int p, int q, int n, const ShrinkageFunction& r) {
  DominationReport rep;
  rep.bound = domination_bound(p, q, n);
  rep.rank_condition = rank_condition(p, q, n);
  rep.bound_condition = r.c1 >= 0.0 && r.c1 <= rep.bound * (1.0 + 1e-12);
  rep.monotone = r.nondecreasing;
  rep.deriv_bounded = std::isfinite(r.c2);
  rep.corollary1_applies = q >= 3;
  rep.corollary2_applies = std::abs(static_cast<long>(p) - static_cast<long>(n) * q) > 1 &&
                           r.c_star.has_value() && *r.c_star > 0.0;
  rep.overall = rep.rank_condition && rep.bound_condition && rep.monotone && rep.deriv_bounded;
  return rep;
}

DominationReport check_domination_conditions(const ModelSpec& spec, const ShrinkageFunction& r) {
  return check_domination_conditions(spec.p, spec.q, spec.n, r);
}

LossMetric::LossMetric(const Matrix& sigma) {
  if (sigma.rows() != sigma.cols() || !sigma.allFinite()) {
    throw InvalidInput("loss: sigma must be a finite square matrix");
  }
  llt_.compute(symmetrize(sigma));
  if (llt_.info() != Eigen::Success) throw NotPositiveDefinite("loss: sigma is not positive definite");
}

double LossMetric::inner(const Matrix& u, const Matrix& v) const {
  if (u.rows() != llt_.rows() || v.rows() != llt_.rows() || u.cols() != v.cols()) {
    throw InvalidInput("loss: dimension mismatch");
  }
  return u.cwiseProduct(llt_.solve(v)).sum();
}

double LossMetric::operator()(const Matrix& theta, const Matrix& delta) const {
  const Matrix d = delta - theta;
  return std::max(0.0, inner(d, d));
}

double loss(const Matrix& theta, const Matrix& delta, const Matrix& sigma) {
  return LossMetric(sigma)(theta, delta);
}

}  // namespace jsmean
