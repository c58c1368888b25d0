#pragma once

#include "cpat/cli/config.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cpat::cli {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitRuntime = 3, kExitCheckFailed = 4 };

std::string_view code_version();

struct CommandOptions {
  std::string config = "defaults";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> checkpoint;
  std::optional<std::string> data;
  std::optional<std::string> input;
  std::optional<std::string> debias_start;
  std::optional<std::string> mode;
  std::optional<std::size_t> jobs;
  bool baseline = false;  // train: maximum likelihood without perturbation
};

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Fast invariant suite behind `cpat check`.
std::vector<CheckResult> run_checks();

int gen_data_command(const CommandOptions& options, std::ostream& log);
int train_command(const CommandOptions& options, std::ostream& log);
int eval_command(const CommandOptions& options, std::ostream& log);
int ablate_command(const CommandOptions& options, std::ostream& log);
int grid_command(const CommandOptions& options, std::ostream& log);
int check_command(const CommandOptions& options, std::ostream& log);
int plot_command(const CommandOptions& options, std::ostream& log);

/// Dispatches by subcommand name and maps exceptions to exit codes.
int run_command(std::string_view name, const CommandOptions& options, std::ostream& log);

}  // namespace cpat::cli
