#include <cstring>
#include <iostream>
#include <string>

#include "mfsg/scenario.hpp"

namespace {

void print_usage() {
  std::cout
      << "Usage: mfsg <command> [--scenario <path>] --out <dir> [--seed <u64>] "
         "[--set key=value ...]\n"
      << "Commands:\n"
      << "  solve-fbsde    solve a conditional mean-field FBSDE family and emit diagnostics\n"
      << "  follower       unicycle follower maximum-principle solve\n"
      << "  leader         leader projected-gradient descent on the deterministic unicycle\n"
      << "  unicycle       control-center boundary value problem and trajectory export\n"
      << "  epsilon-audit  finite-N equilibrium audit with gap curves\n"
      << "  validate       sampled assumption checks for the coefficient family\n"
      << "Exit codes: 0 ok, 2 configuration error, 3 solver divergence, 4 budget refusal\n";
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    print_usage();
    return mfsg::exit_code::kConfig;
  }
  mfsg::ScenarioConfig config;
  config.command = argv[1];
  if (config.command == "--help" || config.command == "-h") {
    print_usage();
    return 0;
  }
  for (int i = 2; i < argc; ++i) {
    const std::string arg = argv[i];
    auto need_value = [&](const char* flag) -> std::string {
      if (i + 1 >= argc) {
        std::cerr << "configuration error: flag " << flag << " needs a value\n";
        std::exit(mfsg::exit_code::kConfig);
      }
      return argv[++i];
    };
    if (arg == "--scenario") {
      config.scenario_file = need_value("--scenario");
    } else if (arg == "--out") {
      config.out_dir = need_value("--out");
    } else if (arg == "--seed") {
      config.seed = std::stoull(need_value("--seed"));
    } else if (arg == "--set") {
      const std::string kv = need_value("--set");
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        std::cerr << "configuration error: --set expects key=value, got '" << kv << "'\n";
        return mfsg::exit_code::kConfig;
      }
      config.overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    } else {
      std::cerr << "configuration error: unknown flag '" << arg << "'\n";
      return mfsg::exit_code::kConfig;
    }
  }
  return mfsg::run_scenario(config);
}
