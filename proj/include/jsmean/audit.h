#pragma once

#include "jsmean/linalg.h"
#include "jsmean/model.h"
#include "jsmean/shrinkage.h"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace jsmean {

inline constexpr double kAlgebraicTol = 1e-8;
inline constexpr double kFiniteDiffTol = 1e-5;
inline constexpr double kDivergenceTol = 1e-4;
inline constexpr double kChainTol = 1e-9;
inline constexpr double kMcSigmas = 3.0;

struct AuditReport {
  std::string name;
  double closed_form_value = 0.0;
  double oracle_value = 0.0;
  double abs_err = 0.0;
  double rel_err = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::uint64_t seed = 0;
  bool inconclusive = false;  // a finite-difference probe crossed a rank boundary
};

// rel_err = abs_err / max(|closed|, |oracle|, scale). `scale` lets identities whose
// value cancels to zero be judged against the size of their constituent terms.
AuditReport make_report(std::string name, double closed, double oracle, double tol, std::uint64_t seed,
                        double scale = 0.0);

// Matrix comparison in max-norm: abs_err = max |C - O|, rel_err = abs_err / max(max|C|, max|O|).
// The value columns carry Frobenius norms.
AuditReport make_matrix_report(std::string name, const Matrix& closed, const Matrix& oracle, double tol,
                               std::uint64_t seed);

struct IdentityContext {
  int p = 0;
  int q = 0;
  int n = 0;
  std::uint64_t seed = 0;
  Matrix sigma;
  SampleDraw draw;
  SpdSqrtResult sqrt;
  Matrix y_tilde;  // sqrt(q) Y A^{-1}
  double f = 0.0;
  Matrix g;        // r(F)/F * S S+ X
  Matrix big_g;    // r(F)^2/F^2 * S+ X X^T S+ S
  Matrix big_h;    // A G A^{-1}
  ShrinkageFunction r;
};

IdentityContext make_context(const ModelSpec& spec, SampleDraw draw, ShrinkageFunction r, std::uint64_t seed = 0);

// Random SPD Sigma = I + B B^T / p, random theta, one model draw; all from `seed`.
IdentityContext random_context(int p, int q, int n, std::uint64_t seed, ShrinkageFunction r = sigmoid_r());

// Same Sigma, Y and r as `ctx` with X replaced.
IdentityContext with_x(const IdentityContext& ctx, const Matrix& x);

// Default finite-difference step multiplier eps^{1/3}; the step for an entry v is mult * (1 + |v|).
double default_fd_step();

struct MatrixAudit {
  Matrix value;
  AuditReport report;
};

struct ScalarAudit {
  double value = 0.0;
  AuditReport report;
};

// dF/dX = 2 S+ X.
MatrixAudit grad_F_wrt_X(const IdentityContext& ctx, double step = default_fd_step());

// sum_ij dg_ij/dX_ij = 2 r'(F) + (q tr(SS+) - 2) r(F)/F.
ScalarAudit div_g_wrt_X(const IdentityContext& ctx, double step = default_fd_step());

// dg_kl/dX_ij = 2(F r' - r)/F^2 (S+X)_ij (SS+X)_kl + (r/F)(SS+)_ki delta_lj  (0-based indices).
double jacobian_g_entry(const IdentityContext& ctx, int i, int j, int k, int l);
std::vector<AuditReport> jacobian_g_spot_check(const IdentityContext& ctx, int count, std::uint64_t seed,
                                               double step = default_fd_step());

// dF/dY_ab = -2(S+XX^TS+Y^T)_ba + 2((I-SS+)XX^TS+S+Y^T)_ba, an nq x p matrix.
Matrix dF_dY_closed(const IdentityContext& ctx);
MatrixAudit dF_dY(const IdentityContext& ctx, double step = default_fd_step());

// (A dS/dY_ab B)_kl = A_kb (YB)_al + (AY^T)_ka B_bl.
Matrix dS_contraction_closed(const IdentityContext& ctx, const Matrix& a_mat, const Matrix& b_mat, int alpha,
                             int beta);
MatrixAudit dS_contraction(const IdentityContext& ctx, const Matrix& a_mat, const Matrix& b_mat, int alpha,
                           int beta, double step = default_fd_step());

struct AuditOptions {
  bool flip_a9_sign = false;  // fault injection for exercising the failure path
};

struct TraceIdentities {
  std::array<double, 9> sums{};
  std::array<double, 9> closed{};
  std::array<AuditReport, 9> reports;
  AuditReport cancel_1_5;
  AuditReport cancel_6_8;
  AuditReport total;  // sum of all nine vs F(p - 2 tr(SS+) - 1)
};

TraceIdentities trace_identities_A1_A9(const IdentityContext& ctx, const AuditOptions& opts = {});

// sum_{a,k,b} Y_ak d(SS+XX^TS+)_bk / dY_ab by finite differences vs F(p - 2 tr(SS+) - 1).
ScalarAudit lemma2_contraction(const IdentityContext& ctx, double step = default_fd_step());

// sum_{a,k,b} Y_ak (dF/dY_ab)(SS+XX^TS+)_bk vs -2 tr((X^T S+ X)^2).
ScalarAudit additional_contraction(const IdentityContext& ctx);

// div_{vec Y~} vec(Y~ H) = r^2/F (nq + p - 2tr(SS+) - 1 + 4T/F^2) - 4 r r' T/F^2, T = tr((X^T S+ X)^2).
double divergence_YH_closed(const IdentityContext& ctx);
// The variant with -4 r r'/F^2 in place of -4 r r' T/F^2; finite differences reject it.
double divergence_YH_unweighted(const IdentityContext& ctx);
double divergence_YH_fd(const IdentityContext& ctx, double step, bool* rank_changed = nullptr);

struct DivergenceAudit {
  double value = 0.0;
  AuditReport report;
  AuditReport trace_g;  // tr(G) vs r^2/F
};

DivergenceAudit divergence_YH(const IdentityContext& ctx, double step = default_fd_step());

// Ratio of finite-difference errors at steps h and h/2; near 4 for a second-order scheme.
struct ConvergenceCheck {
  std::string name;
  double err_h = 0.0;
  double err_half = 0.0;
  double ratio = 0.0;
  bool passed = false;
};

inline constexpr double kConvergenceStep = 2e-2;

ConvergenceCheck convergence_div_g(const IdentityContext& ctx, double step = kConvergenceStep);
ConvergenceCheck convergence_dF_dY(const IdentityContext& ctx, double step = kConvergenceStep);
ConvergenceCheck convergence_lemma2(const IdentityContext& ctx, double step = kConvergenceStep);
ConvergenceCheck convergence_divergence_YH(const IdentityContext& ctx, double step = kConvergenceStep);
AuditReport to_report(const ConvergenceCheck& c, std::uint64_t seed);

// tr(g^T Sigma^{-1} g) = tr(Sigma^{-1} S G); q tr(Sigma^{-1} S G) = tr(S~ H); tr(S~ H) = vec(Y~).vec(Y~ H).
std::array<AuditReport, 3> prop3_chain(const IdentityContext& ctx);

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t reps = 0;
  std::uint64_t seed = 0;
};

struct McAudit {
  McEstimate lhs;
  McEstimate rhs;
  double diff_mean = 0.0;
  double diff_std_error = 0.0;  // SE of the per-draw difference
  AuditReport report;
};

// E tr(g^T Sigma^{-1}(X - theta)) vs E[2r' + (q tr(SS+) - 2) r/F], common draws.
McAudit stein_identity_mc(const ModelSpec& spec, const ShrinkageFunction& r, std::size_t reps, std::uint64_t seed);

// E tr(g^T Sigma^{-1} g) vs (1/q) E[divergence_YH closed form], common draws.
McAudit theorem2_iii_mc(const ModelSpec& spec, const ShrinkageFunction& r, std::size_t reps, std::uint64_t seed);

// Per-instance identity battery; appends reports.
void audit_instance(const IdentityContext& ctx, const AuditOptions& opts, std::vector<AuditReport>& out);

struct FullAuditConfig {
  int instances = 14;
  std::uint64_t seed = 1;
  std::size_t mc_reps = 20000;
  AuditOptions options;
};

// Dimensions cycled through by the instance set: (p, q, n) covering p > nq, p < nq and
// the zero point p = 2nq + 1 of the dN contraction.
const std::vector<std::array<int, 3>>& audit_regimes();

std::vector<AuditReport> run_full_audit(const FullAuditConfig& cfg);

void write_audit_csv(std::ostream& out, const std::vector<AuditReport>& reports);

}  // namespace jsmean
