#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "rcm/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"numerical laboratory for the 1d dynamic random conductance model"};
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed_override = 0;
  unsigned threads = 1;
  bool strict = false;
  app.add_option("--config", config_path, "run configuration file (JSON)")->required();
  app.add_option("--out", out_dir, "output directory (default $RCM_OUT_ROOT/<experiment>)");
  auto* seed_opt =
      app.add_option("--seed-override", seed_override, "replace the walker seed from the config");
  auto* thr_opt = app.add_option("--threads", threads, "worker threads for walker ensembles");
  app.add_flag("--strict-sobolev", strict, "use the unsquared-gradient energy in Sobolev checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  rcm::experiment::RunOptions opt;
  if (!out_dir.empty()) opt.out_dir = out_dir;
  if (seed_opt->count() > 0) opt.seed_override = seed_override;
  if (thr_opt->count() > 0) opt.threads = threads;
  opt.strict_sobolev = strict;
  if (const char* root = std::getenv("RCM_OUT_ROOT"); root && *root) opt.default_out_root = root;

  try {
    std::ifstream in(config_path, std::ios::binary);
    if (!in) {
      std::cerr << "config error: cannot read " << config_path << "\n";
      return 2;
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    const auto cfg = rcm::experiment::parse_config_text(ss.str());
    const auto res = rcm::experiment::run(cfg, opt);
    for (const auto& ck : res.report["checks"]) {
      std::cout << (ck["pass"].get<bool>() ? "PASS " : "FAIL ") << ck["name"].get<std::string>()
                << "  value=" << ck["value"].dump() << " limit=" << ck["limit"].dump() << "\n";
    }
    std::cout << res.report["status"].get<std::string>() << "  artifacts in " << res.out_dir
              << "\n";
    return res.status;
  } catch (const rcm::experiment::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
