#include "cpat/cli/commands.hpp"

#include "cpat/cli/checkpoint.hpp"
#include "cpat/cli/plot.hpp"

#include <filesystem>
#include <fstream>
#include <limits>
#include <iostream>
#include <sstream>

#ifndef CPAT_VERSION
#define CPAT_VERSION "unknown"
#endif

namespace cpat::cli {
namespace {

namespace fs = std::filesystem;

// Writes every line to the console and, when open, to a log file.
class RunLog {
 public:
  RunLog(std::ostream& console, const std::string& path) : console_(console) {
    if (!path.empty()) {
      file_.open(path, std::ios::trunc);
      if (!file_) throw Error("cannot write log file '" + path + "'");
    }
  }
  template <typename T>
  RunLog& operator<<(const T& value) {
    console_ << value;
    if (file_.is_open()) file_ << value;
    return *this;
  }

 private:
  std::ostream& console_;
  std::ofstream file_;
};

ExperimentConfig resolve_config(const CommandOptions& options) {
  ExperimentConfig config = load_config(options.config);
  if (options.debias_start) {
    try {
      config.settings.train.debias_start_step = parse_debias_start(*options.debias_start);
    } catch (const ConfigError&) {
      throw ConfigError("--debias-start expects a step index or 'never'");
    }
  }
  if (options.jobs) config.jobs = *options.jobs;
  if (options.seed) config.settings.train.seed = *options.seed;
  config.validate();
  return config;
}

void log_header(RunLog& log, std::string_view command, const ExperimentConfig& config) {
  log << "# cpat " << code_version() << " " << command << "\n";
  std::istringstream lines(format_config(config));
  for (std::string line; std::getline(lines, line);) log << "# " << line << "\n";
}

std::ofstream open_output(const std::string& path) {
  if (const fs::path parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  return out;
}

World world_for_seed(const ExperimentConfig& config, std::uint64_t seed, double alpha) {
  RngStream rng = RngStream(seed).split("world");
  return build_world(rng, config.world_dims(), alpha);
}

Corpus corpus_for_seed(const World& world, const ExperimentConfig& config, std::uint64_t seed) {
  RngStream rng = RngStream(seed).split("corpus");
  return generate_corpus(world, rng, config.settings.n, config.settings.length);
}

CorpusFile read_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read corpus '" + path + "'");
  return read_corpus(in);
}

std::uint64_t meta_u64(const Checkpoint& checkpoint, const std::string& key) {
  const auto it = checkpoint.meta.find(key);
  if (it == checkpoint.meta.end()) throw CheckpointError("checkpoint: missing meta entry '" + key + "'");
  return std::stoull(it->second);
}

std::string method_tag(bool perturbed_training, PerturbMode mode) {
  if (perturbed_training) return mode == PerturbMode::kPerturbed ? "cp" : "train_only";
  return mode == PerturbMode::kPerturbed ? "test_only" : "mle";
}

PerturbMode parse_mode_option(const std::optional<std::string>& mode) {
  if (!mode) return PerturbMode::kPerturbed;
  try {
    return parse_perturb_mode(*mode);
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("--mode: ") + e.what());
  }
}

void write_summary_file(const std::string& path, const std::vector<SummaryRow>& summary) {
  std::ofstream out = open_output(path);
  write_summary_csv(out, summary);
}

}  // namespace

std::string_view code_version() { return CPAT_VERSION; }

int gen_data_command(const CommandOptions& options, std::ostream& console) {
  const ExperimentConfig config = resolve_config(options);
  const std::string out_path = options.out.value_or("corpus.txt");
  RunLog log(console, out_path + ".log");
  log_header(log, "gen-data", config);
  const std::uint64_t seed = config.settings.train.seed;
  const World world = world_for_seed(config, seed, config.alpha);
  const Corpus corpus = corpus_for_seed(world, config, seed);
  std::ofstream out = open_output(out_path);
  write_corpus(out, corpus, seed);
  log << "wrote " << corpus.size() << " sequences to " << out_path << " (fit residual "
      << format_number(world.fit.max_row_tv) << ")\n";
  return kExitOk;
}

int train_command(const CommandOptions& options, std::ostream& console) {
  const ExperimentConfig config = resolve_config(options);
  const std::string out_path = options.out.value_or("model.ckpt");
  RunLog log(console, out_path + ".log");
  log_header(log, options.baseline ? "train (baseline)" : "train", config);

  std::uint64_t world_seed = config.settings.train.seed;
  Corpus corpus;
  std::optional<World> world;
  if (options.data) {
    CorpusFile file = read_corpus_file(*options.data);
    if (file.corpus.vocab != config.vocab)
      throw ConfigError("corpus vocabulary " + std::to_string(file.corpus.vocab) + " does not match config vocab " +
                        std::to_string(config.vocab));
    world_seed = file.seed;
    world.emplace(world_for_seed(config, world_seed, config.alpha));
    corpus = std::move(file.corpus);
  } else {
    world.emplace(world_for_seed(config, world_seed, config.alpha));
    corpus = corpus_for_seed(*world, config, world_seed);
  }

  TrainConfig train_config = config.settings.train;
  train_config.seed = RngStream(config.settings.train.seed).split("train").fingerprint();
  if (options.baseline) train_config.debias_start_step.reset();
  const TrainResult result =
      options.baseline ? train_mle_baseline(corpus, world->table, train_config) : train(corpus, world->table, train_config);

  Checkpoint checkpoint{result.params, {}};
  checkpoint.meta["alpha"] = format_number(config.alpha);
  checkpoint.meta["code_version"] = std::string(code_version());
  checkpoint.meta["train_seed"] = std::to_string(train_config.seed);
  checkpoint.meta["trainer"] = options.baseline ? "mle" : "cp";
  checkpoint.meta["world_seed"] = std::to_string(world_seed);
  save_checkpoint(out_path, checkpoint);

  const std::string history_path = out_path + ".history.csv";
  std::ofstream history = open_output(history_path);
  history << "step,epoch,loss,psi_norm,debias,wall_s\n";
  for (const auto& r : result.history.records)
    history << r.step << ',' << r.epoch << ',' << format_number(r.loss) << ',' << format_number(r.psi_norm) << ','
            << (r.debias ? 1 : 0) << ',' << format_number(config.settings.record_timing ? r.wall_seconds : 0.0)
            << '\n';
  const auto& last = result.history.records.back();
  log << "trained " << result.history.records.size() << " steps; final loss " << format_number(last.loss)
      << ", psi norm " << format_number(last.psi_norm) << "\n"
      << "wrote " << out_path << " and " << history_path << "\n";
  return kExitOk;
}

int eval_command(const CommandOptions& options, std::ostream& console) {
  const ExperimentConfig config = resolve_config(options);
  if (!options.checkpoint) throw ConfigError("eval requires --checkpoint");
  const PerturbMode mode = parse_mode_option(options.mode);
  const std::string out_path = options.out.value_or("eval.csv");
  RunLog log(console, out_path + ".log");
  log_header(log, "eval", config);

  const Checkpoint checkpoint = load_checkpoint(*options.checkpoint, config.world_dims());
  const std::uint64_t world_seed = options.seed.value_or(meta_u64(checkpoint, "world_seed"));
  const double alpha = checkpoint.meta.count("alpha") ? std::stod(checkpoint.meta.at("alpha")) : config.alpha;
  const World world = world_for_seed(config, world_seed, alpha);
  const Corpus corpus = options.data ? read_corpus_file(*options.data).corpus : corpus_for_seed(world, config, world_seed);
  if (corpus.vocab != world.dims.vocab) throw ConfigError("corpus vocabulary does not match the checkpoint");

  const RngStream root(world_seed);
  RngStream oracle_rng = root.split("oracle");
  const TransitionMatrix oracle = oracle_transition(world, config.settings.n_mc, oracle_rng);
  RngStream matrix_rng = root.split("model_matrix");
  const TransitionMatrix estimate =
      model_transition_matrix(checkpoint.params, world.table, config.settings.n_mc, matrix_rng, mode);
  const PairSet unseen = unseen_pairs(corpus, world.dims.vocab);
  RngStream psi_rng = root.split("psi");

  ResultRow row;
  row.vocab = world.dims.vocab;
  row.alpha = alpha;
  row.method = method_tag(checkpoint.meta.count("trainer") && checkpoint.meta.at("trainer") == "cp", mode);
  row.seed = world_seed;
  row.mae_unseen = unseen.empty() ? std::numeric_limits<double>::quiet_NaN()
                                  : mae_on_pairs(estimate.values(), oracle.values(), unseen);
  row.mae_all = mae_on_pairs(estimate.values(), oracle.values(), all_pairs(world.dims.vocab));
  row.psi_norm_final = psi_mean(checkpoint.params, world.table, corpus.sequences, psi_rng,
                                config.settings.train.perturbation_samples, true)
                           .norm;
  std::ofstream out = open_output(out_path);
  write_results_csv(out, {row});
  log << "mae_unseen " << format_number(row.mae_unseen) << ", mae_all " << format_number(row.mae_all)
      << "; wrote " << out_path << "\n";
  return kExitOk;
}

int ablate_command(const CommandOptions& options, std::ostream& console) {
  ExperimentConfig config = resolve_config(options);
  if (options.mode) {
    config.ablation_modes.clear();
    std::istringstream list(*options.mode);
    for (std::string item; std::getline(list, item, ',');) {
      try {
        config.ablation_modes.push_back(parse_ablation_mode(item));
      } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("--mode: ") + e.what());
      }
    }
  }
  const std::string out_path = options.out.value_or("ablation.csv");
  RunLog log(console, out_path + ".log");
  log_header(log, "ablate", config);
  std::vector<std::string> tags;
  for (AblationMode m : config.ablation_modes) tags.emplace_back(to_string(m));
  const GridResult result = run_replications({{config.vocab}, {config.alpha}, tags}, config.n_reps,
                                             config.settings.train.seed, config.settings, config.jobs);
  std::ofstream out = open_output(out_path);
  write_results_csv(out, result.rows);
  const std::string summary_path = fs::path(out_path).replace_extension(".summary.csv").string();
  write_summary_file(summary_path, result.summary);
  for (const auto& s : result.summary)
    log << s.method << ": mean mae_unseen " << format_number(s.mean_mae_unseen) << " (se "
        << format_number(s.se_mae_unseen) << ", n " << s.count << ")\n";
  log << "wrote " << out_path << " and " << summary_path << "\n";
  return kExitOk;
}

int grid_command(const CommandOptions& options, std::ostream& console) {
  const ExperimentConfig config = resolve_config(options);
  const fs::path dir = options.out.value_or(config.out_dir);
  fs::create_directories(dir);
  RunLog log(console, (dir / "run.log").string());
  log_header(log, "grid", config);
  const GridResult result = run_replications({config.grid_vocab, config.grid_alpha, config.grid_methods},
                                             config.n_reps, config.settings.train.seed, config.settings, config.jobs);
  std::ofstream out = open_output((dir / "results.csv").string());
  write_results_csv(out, result.rows);
  write_summary_file((dir / "summary.csv").string(), result.summary);
  std::size_t failed = 0;
  for (const auto& row : result.rows) {
    if (!row.error) continue;
    ++failed;
    log << "failed: vocab " << row.vocab << " alpha " << format_number(row.alpha) << " " << row.method << " rep "
        << row.rep << ": " << *row.error << "\n";
  }
  log << "wrote " << result.rows.size() << " rows (" << failed << " failed) to " << dir.string() << "\n";
  return kExitOk;
}

int check_command(const CommandOptions& options, std::ostream& log) {
  const ExperimentConfig config = resolve_config(options);
  log << "# cpat " << code_version() << " check\n";
  std::size_t passed = 0;
  const std::vector<CheckResult> results = run_checks();
  for (const auto& r : results) {
    log << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << "\n";
    passed += r.passed;
  }
  log << passed << "/" << results.size() << " checks passed\n";
  (void)config;
  return passed == results.size() ? kExitOk : kExitCheckFailed;
}

int plot_command(const CommandOptions& options, std::ostream& log) {
  if (!options.input) throw ConfigError("plot requires --input <results.csv>");
  std::ifstream in(*options.input);
  if (!in) throw Error("cannot read '" + *options.input + "'");
  const std::vector<PlotPoint> points = plot_points(read_results_csv(in));
  const std::string svg_path = options.out.value_or("figure.svg");
  const std::string csv_path = fs::path(svg_path).replace_extension(".csv").string();
  std::ofstream svg = open_output(svg_path);
  write_plot_svg(svg, points);
  std::ofstream csv = open_output(csv_path);
  write_plot_csv(csv, points);
  log << "plotted " << points.size() << " points to " << svg_path << " and " << csv_path << "\n";
  return kExitOk;
}

int run_command(std::string_view name, const CommandOptions& options, std::ostream& log) {
  try {
    if (name == "gen-data") return gen_data_command(options, log);
    if (name == "train") return train_command(options, log);
    if (name == "eval") return eval_command(options, log);
    if (name == "ablate") return ablate_command(options, log);
    if (name == "grid") return grid_command(options, log);
    if (name == "check") return check_command(options, log);
    if (name == "plot") return plot_command(options, log);
    log << "error: unknown command '" << name << "'\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace cpat::cli
