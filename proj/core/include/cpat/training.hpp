#pragma once

#include "cpat/datagen.hpp"
#include "cpat/models.hpp"
#include "cpat/score_engine.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace cpat {

enum class OptimizerKind { kAdam, kSgd };

struct TrainConfig {
  std::size_t perturbation_samples = 5;  // K
  double lr_theta = 1e-2;
  double lr_beta = 5e-5;
  std::size_t batch_size = 500;
  std::size_t epochs = 25;
  // 1-based optimizer step from which the contrast term is subtracted;
  // nullopt trains without debiasing.
  std::optional<std::size_t> debias_start_step = 10;
  bool duplicate_corpus = true;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double dropout_rate = 0.1;
  Eigen::Index latent_dim = 8;
  Eigen::Index hidden_dim = 64;
  Eigen::Index gen_hidden_dim = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

ModelDims model_dims(const EmbeddingTable& table, const TrainConfig& config);

/// Initial gamma for a run; depends only on the table shape and config.seed.
ModelParams initial_params(const EmbeddingTable& table, const TrainConfig& config);

/// Number of optimizer steps train() takes on a corpus of n sequences.
std::size_t planned_steps(std::size_t n, const TrainConfig& config);

/// Draws every random quantity of one objective evaluation: for each
/// sequence, position t >= 1 and k < K, a latent w, a dropout mask (when
/// `dropout`), and with debiasing a contrast token sampled from
/// evaluation-mode P_theta under an independent latent.
TermBatch sample_objective_terms(const ScoreEngine& engine, std::span<const TokenSequence> sequences,
                                 RngStream& rng, std::size_t samples, bool debias, bool dropout);

struct ObjectiveValue {
  double loss = 0.0;
  Vector grad;
};

/// Sum over sequences, positions and samples of (l - l~); the gradient is
/// the matching sum of score differences (the quantity to ascend).
ObjectiveValue minibatch_objective(const ModelParams& params, const EmbeddingTable& table,
                                   std::span<const TokenSequence> batch, RngStream& rng, std::size_t samples,
                                   bool debias, bool dropout = true);

/// Unperturbed log-likelihood sum over a batch, with its theta gradient.
ObjectiveValue mle_objective(const ModelParams& params, const EmbeddingTable& table,
                             std::span<const TokenSequence> batch, RngStream& rng, bool dropout = true);

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr_theta = 1e-2;
  double lr_beta = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t theta_size = 0;  // flat entries [0, theta_size) use lr_theta

  static OptimizerSettings from(const TrainConfig& config, const ParamLayout& layout);
};

struct OptimizerState {
  Vector m;
  Vector v;
  std::size_t step = 0;
};

/// One ascent step on the flat parameter vector, in place.
void optimizer_step(OptimizerState& state, Vector& params, const Vector& grad, const OptimizerSettings& settings);

struct StepRecord {
  std::size_t step = 0;  // 1-based
  std::size_t epoch = 0;
  double loss = 0.0;
  double psi_norm = 0.0;  // ||minibatch gradient|| / batch size
  bool debias = false;
  double wall_seconds = 0.0;
};

struct TrainHistory {
  std::vector<StepRecord> records;
};

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

/// Continuous-perturbation training of gamma = (theta, beta).
TrainResult train(const Corpus& corpus, const EmbeddingTable& table, const TrainConfig& config);

/// Maximum-likelihood bigram fit without any perturbation. Beta stays at its
/// initial value; the returned history has debias = false throughout.
TrainResult train_mle_baseline(const Corpus& corpus, const EmbeddingTable& table, const TrainConfig& config);

struct PsiSummary {
  Vector mean;
  double norm = 0.0;
};

/// Sample mean of psi over `sequences` (evaluation mode, fresh latents).
PsiSummary psi_mean(const ModelParams& params, const EmbeddingTable& table, std::span<const TokenSequence> sequences,
                    RngStream& rng, std::size_t samples, bool debias = true);

struct ProbeResult {
  Vector mean;
  Vector standard_error;
  std::size_t sequences = 0;

  /// Largest |mean| / SE; coordinates with zero spread count only if their mean is nonzero.
  double max_abs_z() const;
  bool within(double z) const { return max_abs_z() <= z; }
};

/// Monte Carlo check of E[psi] = 0: draws n_mc sequences of length L from the
/// perturbed model at `generator` (uniform first token, dropout off), then
/// evaluates debiased psi at `evaluated_at` (the generator itself when null).
ProbeResult fisher_consistency_probe(const ModelParams& generator, const EmbeddingTable& table, std::size_t n_mc,
                                     std::size_t length, std::size_t samples, RngStream& rng,
                                     const ModelParams* evaluated_at = nullptr);

}  // namespace cpat
