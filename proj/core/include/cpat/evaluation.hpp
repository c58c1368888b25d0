#pragma once

#include "cpat/datagen.hpp"
#include "cpat/inference.hpp"
#include "cpat/training.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cpat {

/// Mean absolute entrywise difference over `pairs`. Throws on an empty set.
double mae_on_pairs(const Matrix& estimate, const Matrix& reference, const PairSet& pairs);

// ---------------------------------------------------------------------------
// Methods
//
// Registered tags:
//   mle, none          unperturbed maximum likelihood, unperturbed matrix
//   test_only          maximum likelihood, perturbed matrix with untrained beta
//   cp, full           perturbation training, perturbed matrix
//   train_only         perturbation training, unperturbed matrix
//   cp_nodebias        perturbation training without debiasing
//   cp_debias<N>       perturbation training, debiasing from step N
// cp / full / train_only use the configured debias schedule.

enum class Trainer { kMle, kPerturbed };

struct MethodSpec {
  std::string tag;
  Trainer trainer = Trainer::kPerturbed;
  bool configured_debias = true;                  // use TrainConfig::debias_start_step
  std::optional<std::size_t> debias_start_step;  // used when !configured_debias
  PerturbMode inference = PerturbMode::kPerturbed;
};

MethodSpec parse_method(const std::string& tag);

enum class AblationMode { kFull, kTrainOnly, kTestOnly, kNone };

std::string_view to_string(AblationMode mode);
AblationMode parse_ablation_mode(std::string_view text);
MethodSpec ablation_method(AblationMode mode);

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentSettings {
  Eigen::Index dim = 50;
  TrainConfig train;  // latent/hidden widths are shared by the world and the model
  std::size_t n = 500;
  std::size_t length = 10;
  std::size_t n_mc = 20000;
  bool record_timing = false;  // wall_s is written as 0 unless set
};

struct ResultRow {
  Eigen::Index vocab = 0;
  double alpha = 0.0;
  std::string method;
  std::size_t rep = 0;
  std::uint64_t seed = 0;
  double mae_unseen = 0.0;  // NaN when the corpus covers every pair
  double mae_all = 0.0;
  double psi_norm_final = 0.0;
  double wall_time_seconds = 0.0;
  std::optional<std::string> error;  // set when the cell failed
};

struct SummaryRow {
  Eigen::Index vocab = 0;
  double alpha = 0.0;
  std::string method;
  std::size_t count = 0;  // successful replications
  double mean_mae_unseen = 0.0;
  double se_mae_unseen = 0.0;
  double mean_mae_all = 0.0;
  double se_mae_all = 0.0;
  double mean_psi_norm = 0.0;
  double se_psi_norm = 0.0;
};

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;  // sample SD / sqrt(n); NaN for n < 2
};

/// Two-pass mean and standard error.
MeanSe mean_and_se(const std::vector<double>& values);

struct GridSpec {
  std::vector<Eigen::Index> vocab_sizes;
  std::vector<double> alphas;
  std::vector<std::string> methods;
};

struct GridResult {
  std::vector<ResultRow> rows;  // ordered by vocab, alpha, method, rep
  std::vector<SummaryRow> summary;
};

/// Seed of replication `rep` for a vocabulary size; the world, corpus and
/// every method of that replication derive from it.
std::uint64_t replication_seed(std::uint64_t base_seed, Eigen::Index vocab, std::size_t rep);

/// Runs every method on one replication: world, corpus, oracle, training,
/// estimated matrix and MAE. Methods sharing a trainer share its run.
std::vector<ResultRow> run_cell(Eigen::Index vocab, double alpha, const std::vector<std::string>& methods,
                                std::size_t rep, std::uint64_t seed, const ExperimentSettings& settings);

GridResult run_replications(const GridSpec& grid, std::size_t n_reps, std::uint64_t base_seed,
                            const ExperimentSettings& settings, std::size_t jobs = 1);

std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows);

/// Runs the requested ablation modes on one world; the corpus and oracle are
/// drawn from `rng`.
std::vector<ResultRow> ablation_run(const World& world, const ExperimentSettings& settings,
                                    const std::vector<AblationMode>& modes, RngStream& rng);

// CSV: header vocab,alpha,method,rep,seed,mae_unseen,mae_all,psi_norm,wall_s;
// numbers with 10 significant digits; LF line endings.
void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows);
std::vector<ResultRow> read_results_csv(std::istream& in);
void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);

std::string format_number(double value);

}  // namespace cpat
