#include "cpat/training.hpp"

#include "cpat/inference.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace cpat {
namespace {

void shuffle_indices(std::vector<std::size_t>& idx, RngStream& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i));
    std::swap(idx[i - 1], idx[std::min(j, i - 1)]);
  }
}

std::vector<TokenSequence> training_set(const Corpus& corpus, bool duplicate) {
  std::vector<TokenSequence> data = corpus.sequences;
  if (duplicate) data.insert(data.end(), corpus.sequences.begin(), corpus.sequences.end());
  return data;
}

using BatchObjective = ObjectiveValue (*)(const ModelParams&, const EmbeddingTable&, std::span<const TokenSequence>,
                                          RngStream&, const TrainConfig&, bool debias);

ObjectiveValue perturbed_batch(const ModelParams& params, const EmbeddingTable& table,
                               std::span<const TokenSequence> batch, RngStream& rng, const TrainConfig& config,
                               bool debias) {
  return minibatch_objective(params, table, batch, rng, config.perturbation_samples, debias, true);
}

ObjectiveValue mle_batch(const ModelParams& params, const EmbeddingTable& table, std::span<const TokenSequence> batch,
                         RngStream& rng, const TrainConfig&, bool) {
  return mle_objective(params, table, batch, rng, true);
}

TrainResult run_training(const Corpus& corpus, const EmbeddingTable& table, const TrainConfig& config,
                         BatchObjective objective, bool allow_debias) {
  config.validate();
  if (corpus.sequences.empty()) throw InvalidArgument("train: empty corpus");
  if (corpus.vocab != table.vocab_size()) throw InvalidArgument("train: corpus vocabulary does not match the table");

  const RngStream root = RngStream(config.seed).split("train");
  ModelParams params = initial_params(table, config);
  const ParamLayout layout(params.dims());
  const OptimizerSettings settings = OptimizerSettings::from(config, layout);
  OptimizerState state;
  Vector flat = pack(params);

  const std::vector<TokenSequence> data = training_set(corpus, config.duplicate_corpus);
  std::vector<std::size_t> order(data.size());
  std::vector<TokenSequence> batch;
  TrainResult result;
  const RngStream shuffle_root = root.split("shuffle");
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream shuffle_rng = shuffle_root.split("epoch" + std::to_string(epoch));
    shuffle_indices(order, shuffle_rng);
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const auto started = std::chrono::steady_clock::now();
      ++step;
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(data[order[i]]);
      const bool debias = allow_debias && config.debias_start_step && step >= *config.debias_start_step;
      RngStream step_rng = root.split("step" + std::to_string(step));
      const ObjectiveValue value = objective(params, table, batch, step_rng, config, debias);
      if (!std::isfinite(value.loss) || !value.grad.allFinite())
        throw NumericalError("train: non-finite objective at step " + std::to_string(step));
      optimizer_step(state, flat, value.grad, settings);
      params = unpack(layout, flat, config.dropout_rate);
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      result.history.records.push_back(StepRecord{step, epoch, value.loss,
                                                  value.grad.norm() / static_cast<double>(batch.size()), debias,
                                                  seconds});
    }
  }
  result.params = std::move(params);
  return result;
}

}  // namespace

void TrainConfig::validate() const {
  if (perturbation_samples < 1) throw InvalidArgument("TrainConfig: K must be positive");
  if (!(lr_theta > 0.0) || !(lr_beta >= 0.0)) throw InvalidArgument("TrainConfig: learning rates must be positive");
  if (batch_size < 1) throw InvalidArgument("TrainConfig: batch_size must be positive");
  if (epochs < 1) throw InvalidArgument("TrainConfig: epochs must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0))
    throw InvalidArgument("TrainConfig: invalid Adam constants");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw InvalidArgument("TrainConfig: dropout must lie in [0, 1)");
  if (latent_dim < 1 || hidden_dim < 1 || gen_hidden_dim < 1)
    throw InvalidArgument("TrainConfig: model dimensions must be positive");
}

ModelDims model_dims(const EmbeddingTable& table, const TrainConfig& config) {
  return ModelDims{table.vocab_size(), table.dim(), config.latent_dim, config.hidden_dim, config.gen_hidden_dim};
}

ModelParams initial_params(const EmbeddingTable& table, const TrainConfig& config) {
  RngStream rng = RngStream(config.seed).split("train").split("init");
  return init_model_params(model_dims(table, config), config.dropout_rate, rng);
}

std::size_t planned_steps(std::size_t n, const TrainConfig& config) {
  const std::size_t effective = config.duplicate_corpus ? 2 * n : n;
  return config.epochs * ((effective + config.batch_size - 1) / config.batch_size);
}

TermBatch sample_objective_terms(const ScoreEngine& engine, std::span<const TokenSequence> sequences, RngStream& rng,
                                 std::size_t samples, bool debias, bool dropout) {
  const ModelParams& params = engine.params();
  const Eigen::Index latent_dim = params.beta.w1.cols() - params.beta.encoder.wh.cols();
  const Eigen::Index dim = params.theta.w1.rows();
  const double rate = params.theta.dropout_rate;
  const bool masked = dropout && rate > 0.0;

  std::size_t count = 0;
  for (const auto& seq : sequences) count += (seq.size() > 0 ? seq.size() - 1 : 0) * samples;
  const auto n = static_cast<Eigen::Index>(count);

  TermBatch batch;
  batch.terms.reserve(count);
  if (engine.perturbed()) batch.latents.resize(latent_dim, n);
  if (masked) batch.masks.resize(dim, n);
  Block contrast_latents;
  if (debias && engine.perturbed()) contrast_latents.resize(latent_dim, n);

  Eigen::Index j = 0;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& seq = sequences[i];
    for (std::size_t t = 1; t < seq.size(); ++t) {
      for (std::size_t k = 0; k < samples; ++k, ++j) {
        batch.terms.push_back(TermRef{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(t), seq[t], std::nullopt});
        if (engine.perturbed())
          for (Eigen::Index c = 0; c < latent_dim; ++c) batch.latents(c, j) = rng.normal();
        if (masked) batch.masks.col(j) = sample_dropout_mask(rng, dim, rate);
        if (debias && engine.perturbed())
          for (Eigen::Index c = 0; c < latent_dim; ++c) contrast_latents(c, j) = rng.normal();
      }
    }
  }
  if (debias && n > 0) {
    const Block probs = engine.next_token_probs(batch.terms, contrast_latents);
    for (Eigen::Index c = 0; c < n; ++c)
      batch.terms[static_cast<std::size_t>(c)].contrast =
          static_cast<TokenId>(categorical_sample(rng, probs.col(c).data(), probs.rows()));
  }
  return batch;
}

ObjectiveValue minibatch_objective(const ModelParams& params, const EmbeddingTable& table,
                                   std::span<const TokenSequence> batch, RngStream& rng, std::size_t samples,
                                   bool debias, bool dropout) {
  if (batch.empty()) throw InvalidArgument("minibatch_objective: empty batch");
  const ScoreEngine engine(params, table, batch, true);
  const TermBatch terms = sample_objective_terms(engine, batch, rng, samples, debias, dropout);
  ObjectiveValue value;
  value.loss = engine.evaluate(terms, &value.grad);
  return value;
}

ObjectiveValue mle_objective(const ModelParams& params, const EmbeddingTable& table,
                             std::span<const TokenSequence> batch, RngStream& rng, bool dropout) {
  if (batch.empty()) throw InvalidArgument("mle_objective: empty batch");
  const ScoreEngine engine(params, table, batch, false);
  const TermBatch terms = sample_objective_terms(engine, batch, rng, 1, false, dropout);
  ObjectiveValue value;
  value.loss = engine.evaluate(terms, &value.grad);
  return value;
}

OptimizerSettings OptimizerSettings::from(const TrainConfig& config, const ParamLayout& layout) {
  return OptimizerSettings{config.optimizer,  config.lr_theta, config.lr_beta,      config.adam_beta1,
                           config.adam_beta2, config.adam_eps, layout.theta_size()};
}

void optimizer_step(OptimizerState& state, Vector& params, const Vector& grad, const OptimizerSettings& settings) {
  if (grad.size() != params.size()) throw InvalidArgument("optimizer_step: gradient dimension mismatch");
  if (settings.theta_size > static_cast<std::size_t>(params.size()))
    throw InvalidArgument("optimizer_step: theta segment exceeds parameter vector");
  const auto theta = static_cast<Eigen::Index>(settings.theta_size);
  const Eigen::Index beta = params.size() - theta;
  ++state.step;
  if (settings.kind == OptimizerKind::kSgd) {
    params.head(theta) += settings.lr_theta * grad.head(theta);
    params.tail(beta) += settings.lr_beta * grad.tail(beta);
  } else {
    if (state.m.size() != params.size()) {
      state.m = Vector::Zero(params.size());
      state.v = Vector::Zero(params.size());
    }
    state.m = settings.beta1 * state.m + (1.0 - settings.beta1) * grad;
    state.v = settings.beta2 * state.v + (1.0 - settings.beta2) * grad.cwiseAbs2();
    const double t = static_cast<double>(state.step);
    const double m_scale = 1.0 / (1.0 - std::pow(settings.beta1, t));
    const double v_scale = 1.0 / (1.0 - std::pow(settings.beta2, t));
    const Eigen::ArrayXd direction =
        (state.m.array() * m_scale) / ((state.v.array() * v_scale).sqrt() + settings.eps);
    params.head(theta).array() += settings.lr_theta * direction.head(theta);
    params.tail(beta).array() += settings.lr_beta * direction.tail(beta);
  }
  if (!params.allFinite()) throw NumericalError("optimizer_step: non-finite parameters");
}

TrainResult train(const Corpus& corpus, const EmbeddingTable& table, const TrainConfig& config) {
  return run_training(corpus, table, config, perturbed_batch, true);
}

TrainResult train_mle_baseline(const Corpus& corpus, const EmbeddingTable& table, const TrainConfig& config) {
  return run_training(corpus, table, config, mle_batch, false);
}

PsiSummary psi_mean(const ModelParams& params, const EmbeddingTable& table, std::span<const TokenSequence> sequences,
                    RngStream& rng, std::size_t samples, bool debias) {
  if (sequences.empty()) throw InvalidArgument("psi_mean: no sequences");
  PsiSummary summary;
  const ParamLayout layout(params.dims());
  if (samples == 0) {
    summary.mean = Vector::Zero(static_cast<Eigen::Index>(layout.size()));
    return summary;
  }
  const ScoreEngine engine(params, table, sequences, true);
  const TermBatch terms = sample_objective_terms(engine, sequences, rng, samples, debias, false);
  engine.evaluate(terms, &summary.mean);
  summary.mean /= static_cast<double>(sequences.size());
  summary.norm = summary.mean.norm();
  return summary;
}

double ProbeResult::max_abs_z() const {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    if (standard_error[i] > 0.0) {
      worst = std::max(worst, std::abs(mean[i]) / standard_error[i]);
    } else if (mean[i] != 0.0) {
      return std::numeric_limits<double>::infinity();
    }
  }
  return worst;
}

ProbeResult fisher_consistency_probe(const ModelParams& generator, const EmbeddingTable& table, std::size_t n_mc,
                                     std::size_t length, std::size_t samples, RngStream& rng,
                                     const ModelParams* evaluated_at) {
  if (n_mc < 100) throw InvalidArgument("fisher_consistency_probe: n_mc must be at least 100");
  if (length < 2) throw InvalidArgument("fisher_consistency_probe: length must be at least 2");
  ModelParams data_model = generator;
  data_model.theta.dropout_rate = 0.0;
  ModelParams scored = evaluated_at ? *evaluated_at : generator;
  scored.theta.dropout_rate = 0.0;

  RngStream start_rng = rng.split("initial");
  RngStream gen_rng = rng.split("generate");
  RngStream psi_rng = rng.split("psi");
  const ProbVector uniform(Vector::Constant(table.vocab_size(), 1.0 / static_cast<double>(table.vocab_size())));
  std::vector<TokenSequence> prompts(n_mc);
  for (auto& prompt : prompts) prompt = {static_cast<TokenId>(categorical_sample(start_rng, uniform))};
  const std::vector<TokenSequence> data =
      generate_batch(data_model, table, std::move(prompts), length, gen_rng, PerturbMode::kPerturbed);

  // Per-sequence psi, accumulated with Welford updates.
  const auto dim = static_cast<Eigen::Index>(ParamLayout(scored.dims()).size());
  Vector mean = Vector::Zero(dim);
  Vector m2 = Vector::Zero(dim);
  Vector psi;
  std::size_t count = 0;
  for (const auto& seq : data) {
    const std::span<const TokenSequence> one(&seq, 1);
    const ScoreEngine engine(scored, table, one, true);
    const TermBatch terms = sample_objective_terms(engine, one, psi_rng, samples, true, false);
    engine.evaluate(terms, &psi);
    ++count;
    const Vector delta = psi - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta.cwiseProduct(psi - mean);
  }
  ProbeResult result;
  result.sequences = count;
  result.mean = mean;
  result.standard_error = (m2 / static_cast<double>(count - 1)).cwiseSqrt() / std::sqrt(static_cast<double>(count));
  return result;
}

}  // namespace cpat
