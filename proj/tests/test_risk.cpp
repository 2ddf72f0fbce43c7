#include "jsmean/errors.h"
#include "jsmean/parallel.h"
#include "jsmean/risk.h"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <sstream>

using namespace jsmean;

namespace {

class ScopedThreads {
 public:
  explicit ScopedThreads(const char* value) {
    if (const char* old = std::getenv(kThreadsEnv)) saved_ = old;
    setenv(kThreadsEnv, value, 1);
  }
  ~ScopedThreads() {
    if (saved_.empty()) {
      unsetenv(kThreadsEnv);
    } else {
      setenv(kThreadsEnv, saved_.c_str(), 1);
    }
  }

 private:
  std::string saved_;
};

}  // namespace

TEST_CASE("mc_risk: MLE risk is pq") {
  for (const Matrix& sigma : {identity_sigma(4), compound_sigma(4)}) {
    const ModelSpec spec = make_spec(4, 3, 2, Matrix::Constant(4, 3, 2.0), sigma);
    const RiskEstimate e = mc_risk(spec, EstimatorConfig::mle(), 10000, 3);
    CHECK(std::abs(e.mean - 12.0) <= 3.0 * e.std_error);
    CHECK(e.reps == 10000);
    CHECK(e.seed == 3);
  }
}

TEST_CASE("mc_risk: oracle estimator has zero risk") {
  const ModelSpec spec = make_spec(4, 3, 2, Matrix::Constant(4, 3, 1.0), compound_sigma(4));
  const RiskEstimate e = mc_risk(spec, EstimatorConfig::oracle(), 100, 1);
  CHECK(e.mean == 0.0);
  CHECK(e.std_error == 0.0);
}

TEST_CASE("mc_risk: shrinkage beats the MLE at theta = 0 and input checks") {
  const ModelSpec spec = make_spec(16, 3, 2, Matrix::Zero(16, 3), identity_sigma(16));
  const RiskEstimate e =
      mc_risk(spec, EstimatorConfig::shrinkage(scaled_sigmoid_r(domination_bound(16, 3, 2))), 4000, 5);
  CHECK(e.mean + 2.0 * e.std_error < 48.0);
  CHECK_THROWS_AS(mc_risk(spec, EstimatorConfig::mle(), 1, 5), InvalidInput);
}

TEST_CASE("risk_difference") {
  const ModelSpec zero = make_spec(16, 3, 2, Matrix::Zero(16, 3), identity_sigma(16));
  const RiskDifference none = risk_difference(zero, zero_r(), 500, 7);
  CHECK(none.delta_risk == 0.0);
  CHECK(none.std_error == 0.0);

  const ShrinkageFunction r = scaled_sigmoid_r(32.0 / 13.0);
  const RiskDifference at0 = risk_difference(zero, r, 10000, 8);
  CHECK(at0.delta_risk + 2.0 * at0.std_error < 0.0);
  CHECK(at0.theta_norm == 0.0);

  const ModelSpec far = make_spec(16, 3, 2, 50.0 * theta_direction(16, 3), identity_sigma(16));
  const RiskDifference at50 = risk_difference(far, r, 10000, 8);
  CHECK(at50.theta_norm == doctest::Approx(50.0));
  CHECK(std::abs(at50.delta_risk) < std::abs(at0.delta_risk));

  const RiskEstimate mle = mc_risk(zero, EstimatorConfig::mle(), 10000, 8);
  const RiskEstimate shr = mc_risk(zero, EstimatorConfig::shrinkage(r), 10000, 8);
  CHECK(at0.delta_risk == doctest::Approx(shr.mean - mle.mean).epsilon(1e-10));
}

TEST_CASE("heavy_tail_rule") {
  CHECK_FALSE(heavy_tail_rule({1.0, 1.1, 0.9, 1.05, 1.0}));
  CHECK(heavy_tail_rule({1.0, 1.1, 0.9, 50.0, 1.0}));
  CHECK_FALSE(heavy_tail_rule({1.0, 9.9}));
  CHECK(heavy_tail_rule({1.0, 10.1}));
  CHECK_FALSE(heavy_tail_rule({}));
}

TEST_CASE("inv_F_diagnostic: control regime stabilizes below the analytic bound") {
  const ModelSpec control = make_spec(8, 2, 1, Matrix::Zero(8, 2), identity_sigma(8));
  const InvFReport rep = inv_F_diagnostic(control, 20000, 1);
  CHECK(rep.rank_condition);
  CHECK_FALSE(rep.heavy_tail);
  CHECK(rep.batch_means.size() == static_cast<std::size_t>(kInvFBatches));
  CHECK(rep.batch_sizes.front() == 19);
  CHECK(rep.batch_sizes.back() == 19u << 9);
  CHECK(rep.min_rank == 2);
  CHECK(rep.max_rank == 2);
  CHECK(rep.mean <= lemma4_upper_bound(control));
  CHECK_THROWS_AS(inv_F_diagnostic(control, 99, 1), InvalidInput);
}

TEST_CASE("inv_F_diagnostic: the counterexample is flagged") {
  const ModelSpec ex = make_spec(2, 1, 1, Matrix::Ones(2, 1), identity_sigma(2));
  const InvFReport rep = inv_F_diagnostic(ex, 100000, 1);
  CHECK_FALSE(rep.rank_condition);
  CHECK(rep.heavy_tail);
  CHECK(rep.min_rank == 1);
  CHECK(rep.max_rank == 1);
}

TEST_CASE("inv_F_diagnostic: Sigma scaling") {
  const double c = 7.0;
  const ModelSpec a = make_spec(8, 2, 1, Matrix::Zero(8, 2), compound_sigma(8));
  const ModelSpec b = make_spec(8, 2, 1, Matrix::Zero(8, 2), c * compound_sigma(8));
  const InvFReport ra = inv_F_diagnostic(a, 2000, 4);
  const InvFReport rb = inv_F_diagnostic(b, 2000, 4);
  CHECK(ra.batch_sizes == rb.batch_sizes);
  CHECK(ra.heavy_tail == rb.heavy_tail);
  for (std::size_t k = 0; k < ra.batch_means.size(); ++k)
    CHECK(rb.batch_means[k] == doctest::Approx(ra.batch_means[k]).epsilon(1e-9));

  const SampleDraw d = sample_draw(a, 9);
  const double f = compute_F(d.x, d.s_pinv);
  const double fc = compute_F(d.x, pinv(c * d.s));
  CHECK(1.0 / fc == doctest::Approx(c / f).epsilon(1e-10));
}

TEST_CASE("lemma4_upper_bound") {
  for (int p : {3, 5, 8}) {
    for (int n : {1, 2}) {
      const ModelSpec spec = make_spec(p, 3, n, Matrix::Zero(p, 3), identity_sigma(p));
      CHECK(lemma4_upper_bound(spec) == doctest::Approx(n * p * p * (p + 1) / 2.0).epsilon(1e-12));
    }
  }
  CHECK(lemma4_upper_bound(make_spec(8, 2, 1, Matrix::Zero(8, 2), identity_sigma(8))) ==
        doctest::Approx(288.0).epsilon(1e-12));

  Matrix sigma = Matrix::Zero(5, 5);
  sigma.diagonal() << 1, 2, 4, 5, 10;
  const ModelSpec q1 = make_spec(5, 1, 3, Matrix::Zero(5, 1), sigma);
  double loop = 0.0;
  for (int j = 3; j <= 5; ++j)
    for (int i = 0; i < j; ++i) loop += 1.0 / sigma(i, i);
  CHECK(loop == 5.75);
  CHECK(lemma4_upper_bound(q1) == doctest::Approx(3.0 * 5.0 * 10.0 * loop).epsilon(1e-12));
  CHECK(lemma4_upper_bound(q1) == doctest::Approx(862.5).epsilon(1e-12));

  CHECK_THROWS_AS(lemma4_upper_bound(make_spec(2, 1, 1, Matrix::Ones(2, 1), identity_sigma(2))),
                  PreconditionError);
}

TEST_CASE("theta ladder and n list") {
  const Matrix d = theta_direction(16, 3);
  CHECK(d.norm() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK((theta_direction(16, 3).array() == d.array()).all());
  CHECK(default_theta_ladder().size() == 11);
  CHECK(default_n_list(16) == std::vector<int>{2, 4, 15, 32});
  CHECK(default_n_list(4) == std::vector<int>{1, 3, 8});
}

TEST_CASE("simulation_grid: shape, ordering, flags, single cell") {
  GridConfig cfg;
  const auto rows = simulation_grid(cfg, 20, 1);
  REQUIRE(rows.size() == 44);
  CHECK(rows[0].n == 2);
  CHECK(rows[0].theta_norm == 0.0);
  CHECK(rows[10].theta_norm == 64.0);
  CHECK(rows[43].n == 32);
  for (const auto& r : rows) {
    CHECK(r.rank_condition_ok);
    CHECK(r.seed == rows[(&r - rows.data()) / 11 * 11].seed);
  }

  GridConfig bad;
  bad.p = 3;
  bad.q = 1;
  bad.n_list = {1, 3};
  bad.theta_norms = {0.0, 1.0};
  const auto brows = simulation_grid(bad, 20, 1);
  REQUIRE(brows.size() == 4);
  CHECK_FALSE(brows[0].rank_condition_ok);
  CHECK(std::isnan(brows[0].delta_risk));
  CHECK(brows[2].rank_condition_ok);

  GridConfig one;
  one.n_list = {2};
  one.theta_norms = {4.0};
  const auto single = simulation_grid(one, 200, 9);
  REQUIRE(single.size() == 1);
  const ModelSpec spec = make_spec(16, 3, 2, 4.0 * theta_direction(16, 3), identity_sigma(16));
  const RiskDifference direct = risk_difference(spec, scaled_sigmoid_r(32.0 / 13.0), 200, single[0].seed);
  CHECK(single[0].delta_risk == direct.delta_risk);
  CHECK(single[0].std_error == direct.std_error);
}

TEST_CASE("simulation_grid: compound Sigma gives matching signs at theta = 0") {
  GridConfig cfg;
  cfg.sigma_kind = "compound";
  cfg.sigma = compound_sigma(16);
  cfg.theta_norms = {0.0};
  for (const auto& r : simulation_grid(cfg, 2000, 3)) CHECK(r.delta_risk + 2.0 * r.std_error < 0.0);
}

TEST_CASE("results do not depend on the thread count") {
  GridConfig cfg;
  cfg.n_list = {2, 15};
  cfg.theta_norms = {0.0, 8.0};
  std::string one, three;
  {
    ScopedThreads t("1");
    std::ostringstream out;
    write_grid_csv(out, simulation_grid(cfg, 300, 4));
    one = out.str();
  }
  {
    ScopedThreads t("3");
    std::ostringstream out;
    write_grid_csv(out, simulation_grid(cfg, 300, 4));
    three = out.str();
  }
  CHECK(one == three);
  CHECK(one.rfind("p,q,n,sigma_kind,theta_norm,reps,seed,delta_risk,stderr,rank_condition_ok\n", 0) == 0);
}
