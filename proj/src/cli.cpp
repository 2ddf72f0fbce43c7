#include "jsmean/cli.h"

#include "jsmean/audit.h"
#include "jsmean/errors.h"
#include "jsmean/format.h"
#include "jsmean/model.h"
#include "jsmean/risk.h"
#include "jsmean/shrinkage.h"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

namespace jsmean {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidInput(what + ": '" + s + "' is not a number");
  }
}

long long parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidInput(what + ": '" + s + "' is not an integer");
  }
}

std::vector<int> parse_int_list(const std::string& s, const std::string& what) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(parse_int(trim(item), what)));
  if (out.empty()) throw InvalidInput(what + ": empty list");
  return out;
}

// Rank condition message shared by the commands that refuse to run without it.
std::string rank_condition_message(int p, int q, int n) {
  const long m = std::min<long>(static_cast<long>(n) * q, p);
  return "rank condition fails: q*min(nq,p) = " + std::to_string(q * m) +
         " <= 2, so E[1/F] is infinite and no shrinkage r is admissible (p=" + std::to_string(p) +
         ", q=" + std::to_string(q) + ", n=" + std::to_string(n) + ")";
}

ShrinkageFunction resolve_r(const std::string& spec, int p, int q, int n) {
  if (spec == "auto") {
    if (!rank_condition(p, q, n)) throw PreconditionError(rank_condition_message(p, q, n));
    return scaled_sigmoid_r(domination_bound(p, q, n));
  }
  if (spec == "sigmoid") return sigmoid_r();
  if (spec.rfind("scaled:", 0) == 0) return scaled_sigmoid_r(parse_double(spec.substr(7), "--r scaled:C"));
  throw InvalidInput("--r must be auto, sigmoid or scaled:C (got '" + spec + "')");
}

Matrix read_matrix_csv(const std::string& path) {
  RawObservations raw = read_observations_csv(path);
  if (raw.w.size() != 1) throw InvalidInput("sigma file '" + path + "' must hold a single block");
  return raw.w.front();
}

std::pair<std::string, Matrix> resolve_sigma(const std::string& spec, int p) {
  if (spec == "identity") return {"identity", identity_sigma(p)};
  if (spec == "compound") return {"compound", compound_sigma(p)};
  if (spec.rfind("compound:", 0) == 0) {
    const std::string args = spec.substr(9);
    const auto comma = args.find(',');
    if (comma == std::string::npos) throw InvalidInput("--sigma compound:RHO,BASE needs two numbers");
    const double rho = parse_double(trim(args.substr(0, comma)), "--sigma rho");
    const double base = parse_double(trim(args.substr(comma + 1)), "--sigma base");
    return {"compound(" + format_double(rho) + ";" + format_double(base) + ")", compound_sigma(p, rho, base)};
  }
  if (spec.rfind("file:", 0) == 0) {
    Matrix m = read_matrix_csv(spec.substr(5));
    if (m.rows() != p || m.cols() != p) {
      throw InvalidInput("sigma file must be " + std::to_string(p) + "x" + std::to_string(p));
    }
    return {"file", m};
  }
  throw InvalidInput("--sigma must be identity, compound, compound:RHO,BASE or file:PATH (got '" + spec + "')");
}

// Writes to the path, or to `fallback` when the path is empty.
void emit(const std::string& path, std::ostream& fallback, const std::function<void(std::ostream&)>& body) {
  if (path.empty()) {
    body(fallback);
    return;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InvalidInput("cannot open output file '" + path + "'");
  body(f);
  if (!f) throw InvalidInput("failed writing output file '" + path + "'");
}

template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const PreconditionError& e) {
    err << "error: " << e.what() << "\n";
    return kExitPrecondition;
  } catch (const NotPositiveDefinite& e) {
    err << "error: " << e.what() << "\n";
    return kExitInputError;
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << "\n";
    return kExitInputError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInputError;
  }
}

}  // namespace

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open config file '" + path + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidInput("config file '" + path + "' line " + std::to_string(line_no) + ": expected key = value");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

int run_estimate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (cfg.data_path.empty()) throw InvalidInput("estimate: --data is required");
    const RawObservations raw = read_observations_csv(cfg.data_path);
    const IngestResult in = ingest_observations(raw);
    const int p = static_cast<int>(in.x_bar.rows());
    const int q = static_cast<int>(in.x_bar.cols());
    if (q != cfg.q) {
      throw InvalidInput("estimate: data has " + std::to_string(q) + " columns but --q is " + std::to_string(cfg.q));
    }
    const int n = in.n;
    const ShrinkageFunction r = resolve_r(cfg.r_spec, p, q, n);
    const PinvResult pin = pinv(in.s, std::nullopt, std::max(p, n * q));
    const EstimatorOutput est = estimate(in.x_bar, in.s, pin, r);
    const DominationReport dom = check_domination_conditions(p, q, n, r);
    if (est.degenerate) {
      err << "warning: F = " << format_double(est.f)
          << " is at the degeneracy floor (zero or vanishing scatter); returning the sample mean unshrunk\n";
    }
    emit(cfg.out_path, out, [&](std::ostream& o) {
      o << "quantity,row,col,value\n";
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < q; ++j) o << "delta," << (i + 1) << ',' << (j + 1) << ',' << format_double(est.delta(i, j)) << '\n';
      auto scalar = [&](const char* name, const std::string& v) { o << name << ",,," << v << '\n'; };
      scalar("p", std::to_string(p));
      scalar("q", std::to_string(q));
      scalar("n", std::to_string(n));
      scalar("F", format_double(est.f));
      scalar("rank", std::to_string(est.rank));
      scalar("shrink_factor", format_double(est.shrink_factor));
      scalar("degenerate", est.degenerate ? "1" : "0");
      scalar("r", r.name);
      scalar("c1", format_double(r.c1));
      scalar("domination_bound", format_double(dom.bound));
      scalar("rank_condition", dom.rank_condition ? "1" : "0");
      scalar("bound_condition", dom.bound_condition ? "1" : "0");
      scalar("monotone", dom.monotone ? "1" : "0");
      scalar("deriv_bounded", dom.deriv_bounded ? "1" : "0");
      scalar("corollary1_applies", dom.corollary1_applies ? "1" : "0");
      scalar("corollary2_applies", dom.corollary2_applies ? "1" : "0");
      scalar("overall", dom.overall ? "1" : "0");
    });
    return static_cast<int>(kExitOk);
  });
}

int run_simulate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (cfg.p < 1 || cfg.q < 1) throw InvalidInput("simulate: p and q must be >= 1");
    GridConfig grid;
    grid.p = cfg.p;
    grid.q = cfg.q;
    grid.n_list = cfg.n_list.empty() ? default_n_list(cfg.p) : cfg.n_list;
    for (int n : grid.n_list) {
      if (n < 1) throw InvalidInput("simulate: every n must be >= 1");
    }
    auto [label, sigma] = resolve_sigma(cfg.sigma, cfg.p);
    grid.sigma_kind = label;
    grid.sigma = sigma;
    if (cfg.r_spec != "auto") grid.r = resolve_r(cfg.r_spec, cfg.p, cfg.q, 1);
    const std::size_t reps = cfg.reps.value_or(10000);
    if (reps < 2) throw InvalidInput("simulate: --reps must be >= 2");
    const auto rows = simulation_grid(grid, reps, cfg.seed);
    emit(cfg.out_path, out, [&](std::ostream& o) { write_grid_csv(o, rows); });
    const bool any_valid = std::any_of(rows.begin(), rows.end(), [](const GridRow& r) { return r.rank_condition_ok; });
    for (int n : grid.n_list) {
      if (!rank_condition(cfg.p, cfg.q, n)) err << "warning: " << rank_condition_message(cfg.p, cfg.q, n) << "; rows flagged\n";
    }
    return static_cast<int>(any_valid ? kExitOk : kExitPrecondition);
  });
}

int run_audit(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    FullAuditConfig ac;
    ac.instances = cfg.instances;
    ac.seed = cfg.seed;
    ac.mc_reps = cfg.mc_reps;
    ac.options.flip_a9_sign = cfg.inject_fault_a9;
    if (ac.instances < 1) throw InvalidInput("audit: --instances must be >= 1");
    if (ac.mc_reps < 2) throw InvalidInput("audit: --mc-reps must be >= 2");
    const auto reports = run_full_audit(ac);
    emit(cfg.out_path, out, [&](std::ostream& o) { write_audit_csv(o, reports); });
    std::size_t failed = 0;
    for (const auto& r : reports) {
      if (r.inconclusive) {
        err << "skipped: " << r.name << " (seed " << r.seed << "): finite-difference probe crossed a rank boundary\n";
      } else if (!r.passed) {
        ++failed;
        err << "FAILED: " << r.name << " (seed " << r.seed << "): closed " << format_double(r.closed_form_value)
            << " vs oracle " << format_double(r.oracle_value) << ", abs_err " << format_double(r.abs_err)
            << " > tol " << format_double(r.tolerance) << "\n";
      }
    }
    err << reports.size() - failed << "/" << reports.size() << " identity checks passed\n";
    return static_cast<int>(failed ? kExitAuditFailure : kExitOk);
  });
}

int run_counterexample(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const std::size_t reps = cfg.reps.value_or(100000);
    if (reps < 100) throw InvalidInput("counterexample: --reps must be >= 100");
    const ModelSpec example = make_spec(2, 1, 1, Matrix::Ones(2, 1), identity_sigma(2));
    const ModelSpec control = make_spec(8, 2, 1, Matrix::Zero(8, 2), identity_sigma(8));
    const InvFReport ex = inv_F_diagnostic(example, reps, cfg.seed);
    const InvFReport ct = inv_F_diagnostic(control, reps, cfg.seed);
    const double bound = lemma4_upper_bound(control);

    auto write = [&](std::ostream& o) {
      o << "case,p,q,n,rank_condition,reps,seed,mean_inv_F,stderr,heavy_tail,min_rank,max_rank,upper_bound";
      for (int k = 1; k <= kInvFBatches; ++k) o << ",batch_mean_" << k;
      o << '\n';
      auto row = [&](const char* name, const ModelSpec& s, const InvFReport& r, double ub) {
        o << name << ',' << s.p << ',' << s.q << ',' << s.n << ',' << (r.rank_condition ? 1 : 0) << ',' << r.reps
          << ',' << r.seed << ',' << format_double(r.mean) << ',' << format_double(r.std_error) << ','
          << (r.heavy_tail ? 1 : 0) << ',' << r.min_rank << ',' << r.max_rank << ',' << format_double(ub);
        for (int k = 0; k < kInvFBatches; ++k) {
          o << ',' << (k < static_cast<int>(r.batch_means.size()) ? format_double(r.batch_means[k]) : "");
        }
        o << '\n';
      };
      row("example", example, ex, std::numeric_limits<double>::quiet_NaN());
      row("control", control, ct, bound);
    };
    emit(cfg.out_path, out, write);
    if (!cfg.out_path.empty()) {
      out << "example (p=2,q=1,n=1, theta=(1,1)): heavy_tail=" << (ex.heavy_tail ? "true" : "false")
          << " rank range [" << ex.min_rank << "," << ex.max_rank << "]\n";
      out << "control (p=8,q=2,n=1): heavy_tail=" << (ct.heavy_tail ? "true" : "false")
          << " mean 1/F=" << format_double(ct.mean) << " bound=" << format_double(bound) << "\n";
    }
    const bool ok = ex.heavy_tail && !ct.heavy_tail && ct.mean <= bound;
    if (!ok) err << "counterexample dichotomy not observed\n";
    return static_cast<int>(ok ? kExitOk : kExitAuditFailure);
  });
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"James-Stein shrinkage estimation for a Gaussian mean matrix with unknown covariance"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string config_path;
  std::string p, q, n_list, sigma, r_spec, reps, seed, data, outp, instances, mc_reps;
  bool fault = false;

  auto common = [&](CLI::App* sub) { sub->add_option("--config", config_path, "Flat key=value config file (flags win)"); };

  auto* est = app.add_subcommand("estimate", "Shrinkage estimate from a data file of repeated observations");
  common(est);
  est->add_option("--data", data, "Data CSV: blocks of p rows x q columns separated by blank lines");
  est->add_option("--q", q, "Columns per observation");
  est->add_option("--r", r_spec, "auto | sigmoid | scaled:C");
  est->add_option("--out", outp, "Output CSV (stdout when omitted)");

  auto* sim = app.add_subcommand("simulate", "Monte Carlo risk-difference grid");
  common(sim);
  sim->add_option("--p", p, "Rows");
  sim->add_option("--q", q, "Columns");
  sim->add_option("--n-list", n_list, "Comma-separated n values (default p/8,p/4,p-1,2p)");
  sim->add_option("--sigma", sigma, "identity | compound | compound:RHO,BASE | file:PATH");
  sim->add_option("--r", r_spec, "auto | sigmoid | scaled:C");
  sim->add_option("--reps", reps, "Replications per cell (default 10000)");
  sim->add_option("--seed", seed, "Master seed");
  sim->add_option("--out", outp, "Output CSV (stdout when omitted)");

  auto* aud = app.add_subcommand("audit", "Numerical audit of the closed-form identities");
  common(aud);
  aud->add_option("--instances", instances, "Random instances (default 14)");
  aud->add_option("--mc-reps", mc_reps, "Replications for the Monte Carlo identities (default 20000)");
  aud->add_option("--seed", seed, "Master seed");
  aud->add_option("--out", outp, "Output CSV (stdout when omitted)");
  aud->add_flag("--inject-fault-a9", fault)->group("");

  auto* cex = app.add_subcommand("counterexample", "E[1/F] diagnostic on the rank-deficient example and a control");
  common(cex);
  cex->add_option("--reps", reps, "Replications (default 100000)");
  cex->add_option("--seed", seed, "Master seed");
  cex->add_option("--out", outp, "Output CSV (stdout when omitted)");

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInputError;
  }

  CLI::App* sub = app.get_subcommands().front();
  return guarded(err, [&] {
    RunConfig cfg;
    cfg.command = sub->get_name();
    std::map<std::string, std::string> kv;
    if (!config_path.empty()) kv = parse_config_file(config_path);
    auto flag = [&](const std::string& key, const std::string& from_cli) -> std::optional<std::string> {
      const std::string opt = "--" + key;
      if (sub->get_option_no_throw(opt) && sub->get_option(opt)->count() > 0) return from_cli;
      const auto it = kv.find(key);
      if (it != kv.end()) return it->second;
      return std::nullopt;
    };
    for (const auto& [key, _] : kv) {
      if (!sub->get_option_no_throw("--" + key)) {
        throw InvalidInput("config key '" + key + "' is not an option of '" + cfg.command + "'");
      }
    }
    if (auto v = flag("p", p)) cfg.p = static_cast<int>(parse_int(*v, "--p"));
    if (auto v = flag("q", q)) cfg.q = static_cast<int>(parse_int(*v, "--q"));
    if (auto v = flag("n-list", n_list)) cfg.n_list = parse_int_list(*v, "--n-list");
    if (auto v = flag("sigma", sigma)) cfg.sigma = *v;
    if (auto v = flag("r", r_spec)) cfg.r_spec = *v;
    if (auto v = flag("reps", reps)) {
      const long long n = parse_int(*v, "--reps");
      if (n < 1) throw InvalidInput("--reps must be positive");
      cfg.reps = static_cast<std::size_t>(n);
    }
    if (auto v = flag("seed", seed)) cfg.seed = static_cast<std::uint64_t>(parse_int(*v, "--seed"));
    if (auto v = flag("data", data)) cfg.data_path = *v;
    if (auto v = flag("out", outp)) cfg.out_path = *v;
    if (auto v = flag("instances", instances)) cfg.instances = static_cast<int>(parse_int(*v, "--instances"));
    if (auto v = flag("mc-reps", mc_reps)) {
      const long long n = parse_int(*v, "--mc-reps");
      if (n < 2) throw InvalidInput("--mc-reps must be >= 2");
      cfg.mc_reps = static_cast<std::size_t>(n);
    }
    cfg.inject_fault_a9 = fault;

    if (cfg.command == "estimate") {
      if (!flag("q", q)) throw InvalidInput("estimate: --q is required");
      return run_estimate(cfg, out, err);
    }
    if (cfg.command == "simulate") return run_simulate(cfg, out, err);
    if (cfg.command == "audit") return run_audit(cfg, out, err);
    return run_counterexample(cfg, out, err);
  });
}

}  // namespace jsmean
