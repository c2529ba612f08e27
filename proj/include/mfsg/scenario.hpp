#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace mfsg {

inline constexpr const char* kVersion = "0.1.0";

namespace exit_code {
constexpr int kOk = 0;
constexpr int kConfig = 2;
constexpr int kDivergence = 3;
constexpr int kBudget = 4;
}  // namespace exit_code

struct ScenarioConfig {
  std::string command;  // solve-fbsde | follower | leader | unicycle | epsilon-audit | validate
  std::filesystem::path scenario_file;
  std::filesystem::path out_dir;
  std::uint64_t seed = 0x5eedULL;
  std::vector<std::pair<std::string, std::string>> overrides;  // dotted-key = value
};

// Executes the named pipeline: parses and strictly validates the scenario,
// runs the solvers, writes CSV/JSON artifacts plus a run manifest with content
// digests. Returns a process exit code; error text goes to stderr.
int run_scenario(const ScenarioConfig& config);

}  // namespace mfsg
