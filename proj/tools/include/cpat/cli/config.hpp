#pragma once

#include "cpat/evaluation.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace cpat::cli {

/// Malformed or invalid configuration; maps to exit code 2.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct ExperimentConfig {
  Eigen::Index vocab = 50;
  double alpha = 0.5;
  ExperimentSettings settings;  // d, training config, n, L, n_mc

  std::vector<Eigen::Index> grid_vocab{50, 100, 200, 400, 800};
  std::vector<double> grid_alpha{0.5};
  std::vector<std::string> grid_methods{"mle", "cp_nodebias", "cp_debias10", "cp_debias20"};
  std::size_t n_reps = 10;
  std::vector<AblationMode> ablation_modes{AblationMode::kFull, AblationMode::kTrainOnly, AblationMode::kTestOnly,
                                           AblationMode::kNone};
  std::size_t jobs = 1;
  std::string out_dir = "results";

  ModelDims world_dims() const;
  void validate() const;
};

/// Parses `key = value` lines; `#` starts a comment. Unknown keys, repeated
/// keys and unparseable values are errors; absent keys keep their defaults.
ExperimentConfig parse_config(std::string_view text);

/// Reads a config file; the literal path "defaults" yields the defaults.
ExperimentConfig load_config(const std::string& path);

/// Every key with its resolved value, in a form parse_config accepts.
std::string format_config(const ExperimentConfig& config);

/// Parses "never" or a non-negative step index.
std::optional<std::size_t> parse_debias_start(std::string_view text);

}  // namespace cpat::cli
