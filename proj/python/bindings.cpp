#include "jsmean/audit.h"
#include "jsmean/cli.h"
#include "jsmean/errors.h"
#include "jsmean/linalg.h"
#include "jsmean/model.h"
#include "jsmean/risk.h"
#include "jsmean/shrinkage.h"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace jsmean;

PYBIND11_MODULE(_core, m) {
  m.doc() = "James-Stein shrinkage estimators for a Gaussian mean matrix";

  py::register_exception<jsmean::InvalidInput>(m, "InvalidInput", PyExc_ValueError);
  py::register_exception<jsmean::NotPositiveDefinite>(m, "NotPositiveDefinite", PyExc_ValueError);
  py::register_exception<jsmean::PreconditionError>(m, "PreconditionError", PyExc_ValueError);

  py::class_<PinvResult>(m, "PinvResult")
      .def_readonly("pinv", &PinvResult::pinv)
      .def_readonly("rank", &PinvResult::rank)
      .def_readonly("singular_values", &PinvResult::singular_values)
      .def_readonly("tol_used", &PinvResult::tol_used);

  py::class_<SpdSqrtResult>(m, "SpdSqrtResult")
      .def_readonly("a", &SpdSqrtResult::a)
      .def_readonly("a_inv", &SpdSqrtResult::a_inv);

  m.def("pinv", &pinv, py::arg("m"), py::arg("tol") = py::none(), py::arg("dim_hint") = py::none());
  m.def("penrose_residuals", &penrose_residuals, py::arg("s"), py::arg("s_pinv"));
  m.def("spd_sqrt", &spd_sqrt, py::arg("sigma"));
  m.def("numerical_rank", &numerical_rank, py::arg("singular_values"), py::arg("tol"));
  m.def("principal_submatrix_inverse_trace", &principal_submatrix_inverse_trace, py::arg("sigma"), py::arg("j"));

  py::class_<ModelSpec>(m, "ModelSpec")
      .def(py::init(&make_spec), py::arg("p"), py::arg("q"), py::arg("n"), py::arg("theta"), py::arg("sigma"))
      .def_readonly("p", &ModelSpec::p)
      .def_readonly("q", &ModelSpec::q)
      .def_readonly("n", &ModelSpec::n)
      .def_readonly("theta", &ModelSpec::theta)
      .def_readonly("sigma", &ModelSpec::sigma);
  m.def("identity_sigma", &identity_sigma, py::arg("p"));
  m.def("compound_sigma", &compound_sigma, py::arg("p"), py::arg("rho") = 1.0, py::arg("base") = 3.0);

  py::class_<SampleDraw>(m, "SampleDraw")
      .def_readonly("x", &SampleDraw::x)
      .def_readonly("y", &SampleDraw::y)
      .def_readonly("s", &SampleDraw::s)
      .def_readonly("s_pinv", &SampleDraw::s_pinv);
  m.def("sample_draw", &sample_draw, py::arg("spec"), py::arg("seed"));
  m.def("transformed_y", &transformed_y, py::arg("draw"), py::arg("sqrt"), py::arg("q"));
  m.def(
      "ingest_observations",
      [](const std::vector<Matrix>& w) {
        const IngestResult r = ingest_observations(RawObservations{w, std::nullopt});
        return py::make_tuple(r.x_bar, r.s, r.n);
      },
      py::arg("w"), "Returns (x_bar, s, n) from a list of p x q observations.");

  py::class_<ShrinkageFunction>(m, "ShrinkageFunction")
      .def_readonly("name", &ShrinkageFunction::name)
      .def_readonly("c1", &ShrinkageFunction::c1)
      .def_readonly("c2", &ShrinkageFunction::c2)
      .def_readonly("c_star", &ShrinkageFunction::c_star)
      .def_readonly("nondecreasing", &ShrinkageFunction::nondecreasing)
      .def("eval", [](const ShrinkageFunction& r, double t) { return r.eval(t); })
      .def("deriv", [](const ShrinkageFunction& r, double t) { return r.deriv(t); });
  m.def("sigmoid_r", &sigmoid_r);
  m.def("scaled_sigmoid_r", &scaled_sigmoid_r, py::arg("c_max"));
  m.def("constant_r", &constant_r, py::arg("c"));
  m.def("zero_r", &zero_r);

  py::class_<EstimatorOutput>(m, "EstimatorOutput")
      .def_readonly("delta", &EstimatorOutput::delta)
      .def_readonly("f", &EstimatorOutput::f)
      .def_readonly("rank", &EstimatorOutput::rank)
      .def_readonly("shrink_factor", &EstimatorOutput::shrink_factor)
      .def_readonly("degenerate", &EstimatorOutput::degenerate);

  py::class_<DominationReport>(m, "DominationReport")
      .def_readonly("rank_condition", &DominationReport::rank_condition)
      .def_readonly("bound_condition", &DominationReport::bound_condition)
      .def_readonly("monotone", &DominationReport::monotone)
      .def_readonly("deriv_bounded", &DominationReport::deriv_bounded)
      .def_readonly("corollary1_applies", &DominationReport::corollary1_applies)
      .def_readonly("corollary2_applies", &DominationReport::corollary2_applies)
      .def_readonly("overall", &DominationReport::overall)
      .def_readonly("bound", &DominationReport::bound);

  m.def("compute_F", py::overload_cast<const Matrix&, const Matrix&>(&compute_F), py::arg("x"), py::arg("s_pinv"));
  m.def("compute_F", py::overload_cast<const Matrix&, const PinvResult&>(&compute_F), py::arg("x"),
        py::arg("s_pinv"));
  m.def("domination_bound", &domination_bound, py::arg("p"), py::arg("q"), py::arg("n"));
  m.def("rank_condition", &rank_condition, py::arg("p"), py::arg("q"), py::arg("n"));
  m.def("estimate", py::overload_cast<const Matrix&, const Matrix&, const ShrinkageFunction&>(&estimate),
        py::arg("x"), py::arg("s"), py::arg("r"));
  m.def("check_domination_conditions",
        py::overload_cast<int, int, int, const ShrinkageFunction&>(&check_domination_conditions), py::arg("p"),
        py::arg("q"), py::arg("n"), py::arg("r"));
  m.def("check_domination_conditions",
        py::overload_cast<const ModelSpec&, const ShrinkageFunction&>(&check_domination_conditions),
        py::arg("spec"), py::arg("r"));
  m.def("loss", &loss, py::arg("theta"), py::arg("delta"), py::arg("sigma"));

  py::class_<RiskEstimate>(m, "RiskEstimate")
      .def_readonly("mean", &RiskEstimate::mean)
      .def_readonly("stderr", &RiskEstimate::std_error)
      .def_readonly("reps", &RiskEstimate::reps)
      .def_readonly("seed", &RiskEstimate::seed);
  py::class_<RiskDifference>(m, "RiskDifference")
      .def_readonly("delta_risk", &RiskDifference::delta_risk)
      .def_readonly("stderr", &RiskDifference::std_error)
      .def_readonly("reps", &RiskDifference::reps)
      .def_readonly("seed", &RiskDifference::seed)
      .def_readonly("theta_norm", &RiskDifference::theta_norm);
  py::class_<InvFReport>(m, "InvFReport")
      .def_readonly("rank_condition", &InvFReport::rank_condition)
      .def_readonly("batch_sizes", &InvFReport::batch_sizes)
      .def_readonly("batch_means", &InvFReport::batch_means)
      .def_readonly("mean", &InvFReport::mean)
      .def_readonly("stderr", &InvFReport::std_error)
      .def_readonly("heavy_tail", &InvFReport::heavy_tail)
      .def_readonly("min_rank", &InvFReport::min_rank)
      .def_readonly("max_rank", &InvFReport::max_rank);

  m.def(
      "mc_risk",
      [](const ModelSpec& spec, const std::optional<ShrinkageFunction>& r, std::size_t reps, std::uint64_t seed) {
        const EstimatorConfig cfg = r ? EstimatorConfig::shrinkage(*r) : EstimatorConfig::mle();
        return mc_risk(spec, cfg, reps, seed);
      },
      py::arg("spec"), py::arg("r") = py::none(), py::arg("reps"), py::arg("seed"),
      py::call_guard<py::gil_scoped_release>(), "Risk of the shrinkage estimator, or of the MLE when r is None.");
  m.def("risk_difference", &risk_difference, py::arg("spec"), py::arg("r"), py::arg("reps"), py::arg("seed"),
        py::call_guard<py::gil_scoped_release>());
  m.def("inv_F_diagnostic", &inv_F_diagnostic, py::arg("spec"), py::arg("reps"), py::arg("seed"),
        py::call_guard<py::gil_scoped_release>());
  m.def("lemma4_upper_bound", &lemma4_upper_bound, py::arg("spec"));

  py::class_<AuditReport>(m, "AuditReport")
      .def_readonly("name", &AuditReport::name)
      .def_readonly("closed_form_value", &AuditReport::closed_form_value)
      .def_readonly("oracle_value", &AuditReport::oracle_value)
      .def_readonly("abs_err", &AuditReport::abs_err)
      .def_readonly("rel_err", &AuditReport::rel_err)
      .def_readonly("tolerance", &AuditReport::tolerance)
      .def_readonly("passed", &AuditReport::passed)
      .def_readonly("seed", &AuditReport::seed)
      .def_readonly("inconclusive", &AuditReport::inconclusive);
  m.def(
      "run_full_audit",
      [](int instances, std::uint64_t seed, std::size_t mc_reps) {
        FullAuditConfig cfg;
        cfg.instances = instances;
        cfg.seed = seed;
        cfg.mc_reps = mc_reps;
        return run_full_audit(cfg);
      },
      py::arg("instances") = 14, py::arg("seed") = 1, py::arg("mc_reps") = 20000,
      py::call_guard<py::gil_scoped_release>());

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "jsmean");
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a CLI command; returns (exit_code, stdout, stderr).");
}
