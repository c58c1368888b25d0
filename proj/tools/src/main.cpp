#include "cpat/cli/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  using namespace cpat::cli;
  CLI::App app{"Continuous-perturbation bigram language model experiments"};
  app.set_version_flag("--version", std::string(code_version()));
  app.require_subcommand(1);

  CommandOptions options;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string out, checkpoint, data, input, debias_start, mode;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", options.config, "config file, or 'defaults'")->capture_default_str();
    cmd->add_option("--seed", seed, "experiment seed");
    cmd->add_option("--out", out, "output path");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "sample a world and write a corpus");
  add_common(gen);

  CLI::App* train = app.add_subcommand("train", "train a model and write a checkpoint");
  add_common(train);
  train->add_option("--data", data, "corpus file (regenerated from the seed when absent)");
  train->add_option("--debias-start", debias_start, "first debiased step, or 'never'");
  train->add_flag("--baseline", options.baseline, "maximum-likelihood fit without perturbation");

  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint against the oracle");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--data", data, "corpus file defining the seen pairs");
  eval->add_option("--mode", mode, "perturbed or unperturbed");

  CLI::App* ablate = app.add_subcommand("ablate", "run the perturbation ablation");
  add_common(ablate);
  ablate->add_option("--mode", mode, "comma-separated subset of full,train_only,test_only,none");
  ablate->add_option("--jobs", jobs, "worker threads");

  CLI::App* grid = app.add_subcommand("grid", "run the replication grid into a directory");
  add_common(grid);
  grid->add_option("--jobs", jobs, "worker threads");
  grid->add_option("--debias-start", debias_start, "first debiased step for cp, or 'never'");

  CLI::App* check = app.add_subcommand("check", "run the built-in self checks");
  check->add_option("--config", options.config, "config file, or 'defaults'");

  CLI::App* plot = app.add_subcommand("plot", "render MAE against perturbation strength");
  plot->add_option("--input", input, "results CSV")->required();
  plot->add_option("--out", out, "SVG path; a CSV of the plotted points is written alongside");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const auto given = [&](const char* flag) { return chosen->get_option_no_throw(flag) && chosen->count(flag) > 0; };
  if (given("--seed")) options.seed = seed;
  if (given("--jobs")) options.jobs = jobs;
  if (given("--out")) options.out = out;
  if (given("--checkpoint")) options.checkpoint = checkpoint;
  if (given("--data")) options.data = data;
  if (given("--input")) options.input = input;
  if (given("--debias-start")) options.debias_start = debias_start;
  if (given("--mode")) options.mode = mode;
  return run_command(chosen->get_name(), options, std::cout);
}
