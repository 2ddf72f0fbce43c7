#include "jsmean/cli.h"
#include "jsmean/format.h"
#include "jsmean/model.h"
#include "jsmean/shrinkage.h"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

using namespace jsmean;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "jsmean");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("jsmean_cli_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

int count_lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

// Parses the long-format estimate CSV back into delta and the scalar fields.
struct EstimateFile {
  Matrix delta;
  std::map<std::string, std::string> scalars;
};

EstimateFile parse_estimate(const std::string& text, int p, int q) {
  EstimateFile e{Matrix::Zero(p, q), {}};
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    while (cells.size() < 4) cells.emplace_back();
    if (cells[0] == "delta") {
      e.delta(std::stoi(cells[1]) - 1, std::stoi(cells[2]) - 1) = std::strtod(cells[3].c_str(), nullptr);
    } else {
      e.scalars[cells[0]] = cells[3];
    }
  }
  return e;
}

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(cli({}).code == kExitInputError);
  CHECK(cli({"bogus"}).code == kExitInputError);
  CHECK(cli({"simulate", "--p", "abc"}).code == kExitInputError);
  CHECK(cli({"estimate", "--data", (scratch() / "missing.csv").string(), "--q", "2"}).code == kExitInputError);
  CHECK(cli({"estimate", "--data", (scratch() / "missing.csv").string()}).code == kExitInputError);
  CHECK(cli({"simulate", "--sigma", "weird", "--reps", "5"}).code == kExitInputError);
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("estimate: parse failure exits 2 with a message") {
  const fs::path data = scratch() / "bad.csv";
  spit(data, "1,2\n3,oops\n");
  const Result r = cli({"estimate", "--data", data.string(), "--q", "2"});
  CHECK(r.code == kExitInputError);
  CHECK(r.err.find("line 2") != std::string::npos);
}

TEST_CASE("estimate: identical observations take the degenerate path") {
  const fs::path data = scratch() / "same.csv";
  spit(data, "1,2\n3,4\n5,6\n\n1,2\n3,4\n5,6\n");
  const Result r = cli({"estimate", "--data", data.string(), "--q", "2", "--r", "sigmoid"});
  CHECK(r.code == kExitOk);
  CHECK(r.err.find("warning") != std::string::npos);
  const EstimateFile e = parse_estimate(r.out, 3, 2);
  CHECK(e.delta(2, 1) == 6.0);
  CHECK(e.delta(0, 0) == 1.0);
  CHECK(e.scalars.at("degenerate") == "1");
}

TEST_CASE("estimate: auto r without the rank condition exits 3") {
  const fs::path data = scratch() / "rank.csv";
  spit(data, "1\n2\n\n0\n5\n");  // p = 2, q = 1, N = 2 so n = 1 and q*min(n,p) = 1
  const Result r = cli({"estimate", "--data", data.string(), "--q", "1"});
  CHECK(r.code == kExitPrecondition);
  CHECK(r.err.find("rank condition") != std::string::npos);
  CHECK(cli({"estimate", "--data", data.string(), "--q", "1", "--r", "sigmoid"}).code == kExitOk);
}

TEST_CASE("estimate: format contract and bit-exact round trip") {
  const int p = 6, q = 2, n = 3;
  const ModelSpec spec = make_spec(p, q, n, Matrix::Constant(p, q, 1.5), compound_sigma(p));
  const SampleDraw draw = sample_draw(spec, 77);
  const RawObservations raw = observations_from_draw(draw, q);
  const fs::path data = scratch() / "draw.csv";
  {
    std::ofstream f(data, std::ios::binary);
    write_observations_csv(f, raw);
  }
  const fs::path out = scratch() / "est.csv";
  const Result r = cli({"estimate", "--data", data.string(), "--q", "2", "--out", out.string()});
  REQUIRE(r.code == kExitOk);
  const std::string text = slurp(out);
  CHECK(text.rfind("quantity,row,col,value\n", 0) == 0);
  const EstimateFile e = parse_estimate(text, p, q);
  CHECK(e.scalars.at("p") == "6");
  CHECK(e.scalars.at("q") == "2");
  CHECK(e.scalars.at("n") == "3");
  CHECK(e.scalars.at("rank") == "6");
  CHECK(e.scalars.at("overall") == "1");
  CHECK(count_lines(text) == 1 + p * q + 17);

  const IngestResult in = ingest_observations(raw);
  const PinvResult pin = pinv(in.s, std::nullopt, std::max(p, n * q));
  const EstimatorOutput direct = estimate(in.x_bar, in.s, pin, scaled_sigmoid_r(domination_bound(p, q, n)));
  CHECK((e.delta.array() == direct.delta.array()).all());
  CHECK(e.scalars.at("F") == format_double(direct.f));
}

TEST_CASE("simulate: grid shape, determinism, flagged cells") {
  const fs::path a = scratch() / "grid_a.csv";
  const fs::path b = scratch() / "grid_b.csv";
  REQUIRE(cli({"simulate", "--reps", "20", "--seed", "5", "--out", a.string()}).code == kExitOk);
  REQUIRE(cli({"simulate", "--reps", "20", "--seed", "5", "--out", b.string()}).code == kExitOk);
  const std::string text = slurp(a);
  CHECK(text == slurp(b));
  CHECK(count_lines(text) == 45);
  CHECK(text.rfind("p,q,n,sigma_kind,theta_norm,reps,seed,delta_risk,stderr,rank_condition_ok\n", 0) == 0);

  const Result flagged = cli({"simulate", "--p", "3", "--q", "1", "--n-list", "1,3", "--reps", "20"});
  CHECK(flagged.code == kExitOk);
  CHECK(flagged.err.find("rank condition") != std::string::npos);
  CHECK(flagged.out.find(",nan,nan,0\n") != std::string::npos);
  CHECK(cli({"simulate", "--p", "2", "--q", "1", "--n-list", "1", "--reps", "20"}).code == kExitPrecondition);
}

TEST_CASE("simulate: sigma variants") {
  const fs::path sig = scratch() / "sigma.csv";
  spit(sig, "2,0.5\n0.5,1\n");
  const Result f = cli({"simulate", "--p", "2", "--q", "3", "--n-list", "2", "--sigma", "file:" + sig.string(),
                        "--reps", "10"});
  CHECK(f.code == kExitOk);
  CHECK(f.out.find(",file,") != std::string::npos);
  CHECK(cli({"simulate", "--p", "4", "--q", "3", "--n-list", "2", "--sigma", "compound:0.5,2", "--reps", "10"}).code ==
        kExitOk);
  spit(sig, "1,2\n2,1\n");
  CHECK(cli({"simulate", "--p", "2", "--q", "3", "--n-list", "2", "--sigma", "file:" + sig.string(), "--reps",
             "10"})
            .code == kExitInputError);
}

TEST_CASE("config file: values apply, flags win, unknown keys rejected") {
  const fs::path cfg = scratch() / "run.cfg";
  spit(cfg, "# grid\np = 8\nq = 3\nn-list = 2, 7\nreps = 10\nseed = 3\n");
  const Result a = cli({"simulate", "--config", cfg.string()});
  REQUIRE(a.code == kExitOk);
  CHECK(count_lines(a.out) == 1 + 2 * 11);
  CHECK(a.out.find("\n8,3,7,identity,") != std::string::npos);
  const Result b = cli({"simulate", "--config", cfg.string(), "--n-list", "4"});
  REQUIRE(b.code == kExitOk);
  CHECK(count_lines(b.out) == 1 + 11);
  CHECK(b.out.find("\n8,3,4,identity,") != std::string::npos);
  spit(cfg, "p = 8\ncolour = blue\n");
  CHECK(cli({"simulate", "--config", cfg.string()}).code == kExitInputError);
  spit(cfg, "p 8\n");
  CHECK(cli({"simulate", "--config", cfg.string()}).code == kExitInputError);
}

TEST_CASE("audit: passes by default, injected fault names A9") {
  const Result ok = cli({"audit", "--instances", "3", "--mc-reps", "500"});
  CHECK(ok.code == kExitOk);
  CHECK(ok.out.rfind("name,closed_form,oracle,abs_err,rel_err,tol,passed,seed\n", 0) == 0);
  CHECK(ok.err.find("identity checks passed") != std::string::npos);
  const Result bad = cli({"audit", "--instances", "3", "--mc-reps", "500", "--inject-fault-a9"});
  CHECK(bad.code == kExitAuditFailure);
  CHECK(bad.err.find("FAILED: trace_A9") != std::string::npos);
  CHECK(bad.err.find("seed") != std::string::npos);
}

TEST_CASE("counterexample: dichotomy and summary") {
  const fs::path out = scratch() / "cex.csv";
  const Result r = cli({"counterexample", "--reps", "100000", "--seed", "1", "--out", out.string()});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("example (p=2,q=1,n=1, theta=(1,1)): heavy_tail=true rank range [1,1]") != std::string::npos);
  CHECK(r.out.find("control (p=8,q=2,n=1): heavy_tail=false") != std::string::npos);
  const std::string text = slurp(out);
  CHECK(count_lines(text) == 3);
  CHECK(text.find("\nexample,2,1,1,0,100000,1,") != std::string::npos);
  CHECK(cli({"counterexample", "--reps", "50"}).code == kExitInputError);
}

TEST_CASE("the installed binary honours the exit-code contract") {
  const std::string bin = JSMEAN_BINARY;
  auto run = [&](const std::string& args) {
    const std::string cmd = bin + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  CHECK(run("audit --instances 2 --mc-reps 200") == 0);
  CHECK(run("audit --instances 2 --mc-reps 200 --inject-fault-a9") == 1);
  CHECK(run("simulate --p nope") == 2);
  CHECK(run("simulate --p 2 --q 1 --n-list 1 --reps 10") == 3);
}
