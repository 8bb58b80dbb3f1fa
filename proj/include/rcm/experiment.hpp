#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rcm/corrector.hpp"
#include "rcm/env.hpp"

namespace rcm::experiment {

using json = nlohmann::ordered_json;

// Unparseable config text or an invalid/missing field. `where` is a dotted
// field path, or "line N" for syntax errors. The CLI maps this to exit 2.
struct ConfigError : std::invalid_argument {
  std::string where;
  ConfigError(std::string w, const std::string& what)
      : std::invalid_argument(w + ": " + what), where(std::move(w)) {}
};

enum class ExperimentKind {
  simulate,
  corrector,
  verify_qip,
  sublinearity,
  check_conditions,
  sobolev_test,
};

std::string to_string(ExperimentKind k);

// Fully validated run description. Every knob any experiment reads is range-
// checked at parse time, before an environment is built or a walker launched.
struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::simulate;

  env::EnvironmentModel model;
  std::int64_t L = 0;
  double T = env::kStaticPeriod;
  std::vector<std::int64_t> n_values;
  std::size_t walkers = 0;
  double horizon = 0;

  std::uint64_t env_seed = 1;
  std::uint64_t walker_seed = 1;
  std::int64_t start_site = 0;
  double start_time = 0;
  unsigned threads = 1;
  std::string out;  // empty: resolved from --out or the output root

  double tol_sigma2_rel = 0.03;
  double tol_qv_rel = 0.03;
  double tol_residual = 1e-9;
  double tol_mart_se = 3.0;

  std::vector<double> mark_times;  // simulate; defaults to {horizon}
  bool keep_paths = false;
  corrector::PropagatorRoute route = corrector::PropagatorRoute::automatic;
  std::vector<double> mart_grid{0.0};
  std::vector<double> mart_lags{1.0};
  int ks_n = 0;  // 0 disables the KS stage of verify-qip
  std::size_t ks_m = 2000;
  std::size_t sob_instances = 200;
  bool strict_sobolev = false;
  double p_min = 1.1, p_max = 6.0;
  double q_min = 1.0, q_max = 6.0;
  int p_steps = 50, q_steps = 51;
};

// Flag and process-environment inputs that sit on top of the config file.
struct RunOptions {
  std::optional<std::string> out_dir;          // --out, beats config "out"
  std::optional<std::uint64_t> seed_override;  // --seed-override, beats seeds.walkers
  std::optional<unsigned> threads;             // --threads
  bool strict_sobolev = false;                 // --strict-sobolev, or-ed with config
  std::string default_out_root = "rcm-out";    // $RCM_OUT_ROOT
};

struct CheckResult {
  std::string name;
  bool pass = false;
  double value = 0;
  double limit = 0;
};

struct RunResult {
  int status = 0;            // 0 all checks pass, 1 otherwise
  std::string failed_check;  // first failing check when status is 1
  std::string out_dir;
  json report;  // the object written to report.json
  std::vector<std::string> artifacts;
};

json parse_config_text(const std::string& text);
ExperimentConfig parse_config(const json& j);

// Parse, validate, execute, and write report.json plus CSV artifacts under the
// resolved output directory. Bad configs throw ConfigError; check failures and
// runtime breakdowns come back as status 1 with the failing check named.
// Reports and CSVs are byte-identical across reruns and thread counts.
RunResult run(const json& config, const RunOptions& opt = {});

}  // namespace rcm::experiment
