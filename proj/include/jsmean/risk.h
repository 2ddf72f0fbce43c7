#pragma once

#include "jsmean/model.h"
#include "jsmean/shrinkage.h"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace jsmean {

struct RiskEstimate {
  double mean = 0.0;
  double std_error = 0.0;  // sample std / sqrt(reps)
  std::size_t reps = 0;
  std::uint64_t seed = 0;
};

struct RiskDifference {
  double delta_risk = 0.0;  // mean of L(theta, delta_r) - L(theta, X) over common draws
  double std_error = 0.0;
  std::size_t reps = 0;
  std::uint64_t seed = 0;
  double theta_norm = 0.0;
};

struct EstimatorConfig {
  enum class Kind { mle, shrinkage, oracle };
  Kind kind = Kind::mle;
  ShrinkageFunction r;

  static EstimatorConfig mle() { return {}; }
  static EstimatorConfig shrinkage(ShrinkageFunction fn) { return {Kind::shrinkage, std::move(fn)}; }
  // Returns theta itself; only useful as a zero-risk check of the harness.
  static EstimatorConfig oracle() { return {Kind::oracle, {}}; }
};

// Replication i uses the draw seeded by derive_seed(seed, i).
RiskEstimate mc_risk(const ModelSpec& spec, const EstimatorConfig& config, std::size_t reps, std::uint64_t seed);

RiskDifference risk_difference(const ModelSpec& spec, const ShrinkageFunction& r, std::size_t reps,
                               std::uint64_t seed);

inline constexpr int kInvFBatches = 10;

struct InvFReport {
  bool rank_condition = false;
  std::vector<std::size_t> batch_sizes;  // b, 2b, 4b, ... with b = max(1, reps / 1023)
  std::vector<double> batch_means;
  double mean = 0.0;
  double std_error = 0.0;
  // Some batch mean exceeds 10x the median of the batch means before it. A pragmatic
  // diagnostic for non-stabilizing averages, not a statistical test.
  bool heavy_tail = false;
  int min_rank = 0;
  int max_rank = 0;
  std::size_t reps = 0;
  std::uint64_t seed = 0;
};

InvFReport inv_F_diagnostic(const ModelSpec& spec, std::size_t reps, std::uint64_t seed);

// Applies the batch rule to an ordered sequence of 1/F values.
bool heavy_tail_rule(const std::vector<double>& batch_means);

// n p lambda_max(Sigma) sum_{j = max(floor(3/q), 1)}^{p} tr((Sigma_{1:j,1:j})^{-1}).
double lemma4_upper_bound(const ModelSpec& spec);

inline constexpr std::uint64_t kThetaDirectionSeed = 2718281828ULL;

// Unit-Frobenius p x q direction for the theta ladder.
Matrix theta_direction(int p, int q, std::uint64_t seed = kThetaDirectionSeed);

// {0, 1, 2, 4, 8, 12, 16, 24, 32, 48, 64}.
std::vector<double> default_theta_ladder();

// {p/8, p/4, p-1, 2p}, dropping values below 1 and duplicates.
std::vector<int> default_n_list(int p);

struct GridConfig {
  int p = 16;
  int q = 3;
  std::vector<int> n_list;              // empty: default_n_list(p)
  std::string sigma_kind = "identity";  // label written to the CSV
  Matrix sigma;                         // empty: identity
  std::vector<double> theta_norms = default_theta_ladder();
  std::uint64_t direction_seed = kThetaDirectionSeed;
  std::optional<ShrinkageFunction> r;   // empty: scaled_sigmoid_r(domination_bound(p, q, n)) per cell
};

struct GridRow {
  int p = 0;
  int q = 0;
  int n = 0;
  std::string sigma_kind;
  double theta_norm = 0.0;
  std::size_t reps = 0;
  std::uint64_t seed = 0;
  double delta_risk = 0.0;
  double std_error = 0.0;
  bool rank_condition_ok = false;
};

// Rows ordered by n then by theta norm. Rungs sharing n share the seed derive_seed(seed, n-index, 10),
// so the ladder is evaluated on common draws. Cells failing the rank condition carry NaN values.
std::vector<GridRow> simulation_grid(const GridConfig& cfg, std::size_t reps, std::uint64_t seed);

void write_grid_csv(std::ostream& out, const std::vector<GridRow>& rows);

}  // namespace jsmean
