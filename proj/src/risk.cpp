#include "jsmean/risk.h"

#include "jsmean/errors.h"
#include "jsmean/format.h"
#include "jsmean/parallel.h"
#include "jsmean/rng.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace jsmean {

RiskEstimate mc_risk(const ModelSpec& spec, const EstimatorConfig& config, std::size_t reps, std::uint64_t seed) {
  if (reps < 2) throw InvalidInput("mc_risk: reps must be >= 2");
  const DrawSampler sampler(spec);
  const LossMetric metric(spec.sigma);
  const auto losses = parallel_map<double>(reps, [&](std::size_t i) {
    switch (config.kind) {
      case EstimatorConfig::Kind::oracle:
        return 0.0;
      case EstimatorConfig::Kind::mle:
        return metric(spec.theta, sampler.draw(derive_seed(seed, i)).x);
      case EstimatorConfig::Kind::shrinkage: {
        const SampleDraw d = sampler.draw(derive_seed(seed, i));
        return metric(spec.theta, estimate(d.x, d.s, d.s_pinv, config.r).delta);
      }
    }
    return 0.0;
  });
  const auto ms = mean_and_stderr(losses);
  return {ms.mean, ms.std_error, reps, seed};
}

RiskDifference risk_difference(const ModelSpec& spec, const ShrinkageFunction& r, std::size_t reps,
                               std::uint64_t seed) {
  if (reps < 2) throw InvalidInput("risk_difference: reps must be >= 2");
  const DrawSampler sampler(spec);
  const LossMetric metric(spec.sigma);
  const auto diffs = parallel_map<double>(reps, [&](std::size_t i) {
    const SampleDraw d = sampler.draw(derive_seed(seed, i));
    const EstimatorOutput e = estimate(d.x, d.s, d.s_pinv, r);
    return metric(spec.theta, e.delta) - metric(spec.theta, d.x);
  });
  const auto ms = mean_and_stderr(diffs);
  RiskDifference out;
  out.delta_risk = ms.mean;
  out.std_error = ms.std_error;
  out.reps = reps;
  out.seed = seed;
  out.theta_norm = spec.theta.norm();
  return out;
}

bool heavy_tail_rule(const std::vector<double>& batch_means) {
  for (std::size_t k = 1; k < batch_means.size(); ++k) {
    std::vector<double> earlier(batch_means.begin(), batch_means.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(earlier.begin(), earlier.end());
    const std::size_t m = earlier.size();
    const double median = m % 2 ? earlier[m / 2] : 0.5 * (earlier[m / 2 - 1] + earlier[m / 2]);
    if (batch_means[k] > 10.0 * median) return true;
  }
  return false;
}

InvFReport inv_F_diagnostic(const ModelSpec& spec, std::size_t reps, std::uint64_t seed) {
  if (reps < 100) throw InvalidInput("inv_F_diagnostic: reps must be >= 100");
  const DrawSampler sampler(spec);
  struct Sample {
    double inv_f;
    int rank;
  };
  const auto samples = parallel_map<Sample>(reps, [&](std::size_t i) {
    const SampleDraw d = sampler.draw(derive_seed(seed, i));
    const double f = compute_F(d.x, d.s_pinv);
    return Sample{f > 0.0 ? 1.0 / f : std::numeric_limits<double>::infinity(), d.s_pinv.rank};
  });
  std::vector<double> inv(reps);
  InvFReport rep;
  rep.min_rank = std::numeric_limits<int>::max();
  rep.max_rank = 0;
  for (std::size_t i = 0; i < reps; ++i) {
    inv[i] = samples[i].inv_f;
    rep.min_rank = std::min(rep.min_rank, samples[i].rank);
    rep.max_rank = std::max(rep.max_rank, samples[i].rank);
  }
  rep.rank_condition = rank_condition(spec.p, spec.q, spec.n);
  rep.reps = reps;
  rep.seed = seed;
  const auto ms = mean_and_stderr(inv);
  rep.mean = ms.mean;
  rep.std_error = ms.std_error;

  const std::size_t base = std::max<std::size_t>(1, reps / ((std::size_t{1} << kInvFBatches) - 1));
  std::size_t start = 0;
  for (int k = 0; k < kInvFBatches; ++k) {
    const std::size_t size = base << k;
    if (start + size > reps) break;
    rep.batch_sizes.push_back(size);
    rep.batch_means.push_back(pairwise_sum(inv.data() + start, size) / static_cast<double>(size));
    start += size;
  }
  rep.heavy_tail = heavy_tail_rule(rep.batch_means);
  return rep;
}

double lemma4_upper_bound(const ModelSpec& spec) {
  spec.validate();
  if (!rank_condition(spec.p, spec.q, spec.n)) {
    throw PreconditionError("lemma4_upper_bound: rank condition q*min(nq,p) > 2 fails; E[1/F] is infinite");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(spec.sigma), Eigen::EigenvaluesOnly);
  const double lmax = es.eigenvalues().maxCoeff();
  const int start = std::max(3 / spec.q, 1);
  double sum = 0.0;
  for (int j = start; j <= spec.p; ++j) sum += principal_submatrix_inverse_trace(spec.sigma, j);
  return static_cast<double>(spec.n) * spec.p * lmax * sum;
}

Matrix theta_direction(int p, int q, std::uint64_t seed) {
  NormalStream ns(derive_seed(seed, 0, 11));
  Matrix d = ns.matrix(p, q);
  return d / d.norm();
}

std::vector<double> default_theta_ladder() { return {0, 1, 2, 4, 8, 12, 16, 24, 32, 48, 64}; }

std::vector<int> default_n_list(int p) {
  std::vector<int> out;
  for (int n : {p / 8, p / 4, p - 1, 2 * p}) {
    if (n >= 1 && std::find(out.begin(), out.end(), n) == out.end()) out.push_back(n);
  }
  return out;
}

std::vector<GridRow> simulation_grid(const GridConfig& cfg, std::size_t reps, std::uint64_t seed) {
  if (cfg.p < 1 || cfg.q < 1) throw InvalidInput("simulation_grid: p and q must be >= 1");
  const std::vector<int> n_list = cfg.n_list.empty() ? default_n_list(cfg.p) : cfg.n_list;
  if (n_list.empty()) throw InvalidInput("simulation_grid: empty n list");
  const Matrix sigma = cfg.sigma.size() ? cfg.sigma : identity_sigma(cfg.p);
  const Matrix dir = theta_direction(cfg.p, cfg.q, cfg.direction_seed);

  std::vector<GridRow> rows;
  for (std::size_t ni = 0; ni < n_list.size(); ++ni) {
    const int n = n_list[ni];
    if (n < 1) throw InvalidInput("simulation_grid: n must be >= 1, got " + std::to_string(n));
    const std::uint64_t cell_seed = derive_seed(seed, ni, 10);
    const bool ok = rank_condition(cfg.p, cfg.q, n);
    std::optional<ShrinkageFunction> r = cfg.r;
    if (ok && !r) r = scaled_sigmoid_r(domination_bound(cfg.p, cfg.q, n));
    for (double s : cfg.theta_norms) {
      GridRow row;
      row.p = cfg.p;
      row.q = cfg.q;
      row.n = n;
      row.sigma_kind = cfg.sigma_kind;
      row.theta_norm = s;
      row.reps = reps;
      row.seed = cell_seed;
      row.rank_condition_ok = ok;
      if (ok) {
        const ModelSpec spec = make_spec(cfg.p, cfg.q, n, s * dir, sigma);
        const RiskDifference d = risk_difference(spec, *r, reps, cell_seed);
        row.delta_risk = d.delta_risk;
        row.std_error = d.std_error;
      } else {
        row.delta_risk = std::numeric_limits<double>::quiet_NaN();
        row.std_error = std::numeric_limits<double>::quiet_NaN();
      }
      rows.push_back(row);
    }
  }
  return rows;
}

void write_grid_csv(std::ostream& out, const std::vector<GridRow>& rows) {
  out << "p,q,n,sigma_kind,theta_norm,reps,seed,delta_risk,stderr,rank_condition_ok\n";
  for (const auto& r : rows) {
    out << r.p << ',' << r.q << ',' << r.n << ',' << r.sigma_kind << ',' << format_double(r.theta_norm) << ','
        << r.reps << ',' << r.seed << ',' << format_double(r.delta_risk) << ',' << format_double(r.std_error)
        << ',' << (r.rank_condition_ok ? 1 : 0) << '\n';
  }
}

}  // namespace jsmean
