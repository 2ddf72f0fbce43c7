#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace jsmean {

enum ExitCode : int { kExitOk = 0, kExitAuditFailure = 1, kExitInputError = 2, kExitPrecondition = 3 };

struct RunConfig {
  std::string command;
  int p = 16;
  int q = 3;
  std::vector<int> n_list;         // empty: {p/8, p/4, p-1, 2p}
  std::string sigma = "identity";  // identity | compound | compound:RHO,BASE | file:PATH
  std::string r_spec = "auto";     // auto | sigmoid | scaled:C
  std::optional<std::size_t> reps;
  std::uint64_t seed = 1;
  std::string data_path;
  std::string out_path;
  int instances = 14;
  std::size_t mc_reps = 20000;
  bool inject_fault_a9 = false;
};

// Flat `key = value` lines; '#' starts a comment. Keys are the long flag names without dashes.
std::map<std::string, std::string> parse_config_file(const std::string& path);

int run_estimate(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int run_simulate(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int run_audit(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int run_counterexample(const RunConfig& cfg, std::ostream& out, std::ostream& err);

// Full command line (args[0] is the program name). Never throws.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace jsmean
