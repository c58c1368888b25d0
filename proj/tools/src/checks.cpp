#include "cpat/cli/checkpoint.hpp"
#include "cpat/cli/commands.hpp"

#include <cmath>
#include <functional>
#include <sstream>

namespace cpat::cli {
namespace {

constexpr ModelDims kSmall{6, 4, 3, 5, 5};

ModelParams small_params(RngStream& rng, double dropout = 0.0) {
  ModelParams p = init_model_params(kSmall, dropout, rng);
  p.theta.w2 *= 3.0;
  p.beta.w2 *= 2.0;
  return p;
}

std::vector<TokenSequence> random_sequences(RngStream& rng, std::size_t n, std::size_t max_len, TokenId vocab) {
  std::vector<TokenSequence> out(n);
  for (auto& seq : out) {
    seq.resize(1 + rng() % max_len);
    for (auto& t : seq) t = static_cast<TokenId>(rng() % vocab);
  }
  return out;
}

std::string show(double x) {
  std::ostringstream s;
  s.precision(3);
  s << x;
  return s.str();
}

CheckResult softmax_shift() {
  RngStream rng = rng_new(101);
  const Vector logits = 10.0 * gaussian_vector(rng, 12);
  const Vector a = softmax(logits).values();
  const Vector b = softmax((logits.array() + 700.0).matrix()).values();
  const double diff = (a - b).cwiseAbs().maxCoeff();
  return {"softmax shift invariance", diff <= 1e-12 && std::abs(a.sum() - 1.0) <= 1e-14, "max diff " + show(diff)};
}

CheckResult objective_gradient() {
  RngStream rng = rng_new(102);
  const ParamLayout layout(kSmall);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const double dropout = trial % 2 ? 0.2 : 0.0;
    const ModelParams params = small_params(rng, dropout);
    const EmbeddingTable table = build_embedding_table(rng, 6, 4);
    const std::vector<TokenSequence> batch = random_sequences(rng, 3, 5, 6);
    const ScoreEngine sampler(params, table, batch);
    const TermBatch terms = sample_objective_terms(sampler, batch, rng, 2, true, true);
    const GradFunction f = [&](const Vector& flat, Vector* grad) {
      const ModelParams p = unpack(layout, flat, dropout);
      return ScoreEngine(p, table, batch).evaluate(terms, grad);
    };
    worst = std::max(worst, grad_check(f, pack(params), 1e-5));
  }
  return {"objective gradient vs finite differences", worst <= 1e-4, "worst error " + show(worst) + " over 20 instances"};
}

CheckResult zero_alpha_oracle() {
  RngStream rng = rng_new(103);
  const World world = build_world(rng, ModelDims{10, 50, 8, 64, 64}, 0.0);
  RngStream oracle_rng = rng.split("oracle");
  const TransitionMatrix oracle = oracle_transition(world, 100, oracle_rng);
  const double tv = max_row_tv(oracle.values(), world.m0.values());
  return {"alpha = 0 oracle reproduces M0", tv <= 1e-6, "max row TV " + show(tv)};
}

CheckResult contrast_cancellation() {
  RngStream rng = rng_new(104);
  const ModelParams params = small_params(rng);
  const EmbeddingTable table = build_embedding_table(rng, 6, 4);
  const std::vector<TokenSequence> seqs{{2, 3, 5}};
  const ScoreEngine engine(params, table, seqs);
  TermBatch batch;
  batch.terms = {{0, 2, 5, TokenId{5}}};
  batch.latents = gaussian_vector(rng, 3);
  Vector grad;
  const double value = engine.evaluate(batch, &grad);
  return {"identical contrast cancels", value == 0.0 && grad.isZero(0.0), "value " + show(value)};
}

CheckResult fisher_probe() {
  RngStream rng = rng_new(105);
  const ModelParams params = small_params(rng);
  const EmbeddingTable table = build_embedding_table(rng, 6, 4);
  RngStream probe_rng = rng.split("probe");
  const ProbeResult at_truth = fisher_consistency_probe(params, table, 2000, 5, 2, probe_rng);
  ModelParams shifted = params;
  shifted.theta.b2[0] += 1.5;
  RngStream power_rng = rng.split("power");
  const ProbeResult off_truth = fisher_consistency_probe(params, table, 2000, 5, 2, power_rng, &shifted);
  return {"score has zero mean at the generator", at_truth.within(4.0) && !off_truth.within(4.0),
          "max |z| " + show(at_truth.max_abs_z()) + " at truth, " + show(off_truth.max_abs_z()) + " when shifted"};
}

CheckResult debias_schedule() {
  RngStream rng = rng_new(106);
  const EmbeddingTable table = build_embedding_table(rng, 6, 4);
  const Corpus corpus = make_corpus(random_sequences(rng, 200, 6, 6), 6, 6);
  TrainConfig config;
  config.latent_dim = 3;
  config.hidden_dim = 5;
  config.gen_hidden_dim = 5;
  config.batch_size = 40;
  config.epochs = 5;
  config.perturbation_samples = 1;
  config.seed = 7;
  const TrainHistory history = train(corpus, table, config).history;
  bool ok = history.records.size() == 50;
  for (const auto& r : history.records) ok = ok && r.debias == (r.step >= 10);
  return {"debiasing starts at step 10", ok, std::to_string(history.records.size()) + " steps"};
}

CheckResult checkpoint_round_trip() {
  RngStream rng = rng_new(107);
  const Checkpoint original{init_model_params(kSmall, 0.1, rng), {{"world_seed", "42"}}};
  const std::string bytes = encode_checkpoint(original);
  const Checkpoint back = decode_checkpoint(bytes, kSmall);
  bool ok = pack(back.params) == pack(original.params) && back.meta == original.meta;
  std::string corrupted = bytes;
  corrupted[corrupted.size() / 2] ^= 0x01;
  try {
    decode_checkpoint(corrupted);
    ok = false;
  } catch (const CheckpointError&) {
  }
  return {"checkpoint round trip and corruption detection", ok, std::to_string(bytes.size()) + " bytes"};
}

CheckResult grid_determinism() {
  ExperimentSettings settings;
  settings.dim = 8;
  settings.n = 30;
  settings.length = 5;
  settings.n_mc = 200;
  settings.train.latent_dim = 3;
  settings.train.hidden_dim = 5;
  settings.train.gen_hidden_dim = 5;
  settings.train.batch_size = 20;
  settings.train.epochs = 2;
  settings.train.perturbation_samples = 2;
  settings.train.debias_start_step = 2;
  const GridSpec grid{{5}, {0.5}, {"mle", "cp"}};
  const auto csv = [&] {
    std::ostringstream out;
    write_results_csv(out, run_replications(grid, 2, 11, settings).rows);
    return out.str();
  };
  return {"grid output is reproducible", csv() == csv(), "2 methods x 2 replications"};
}

CheckResult mae_symmetry() {
  RngStream rng = rng_new(108);
  const Matrix a = gaussian_vector(rng, 25).reshaped(5, 5);
  const Matrix b = gaussian_vector(rng, 25).reshaped(5, 5);
  const PairSet pairs = all_pairs(5);
  const double ab = mae_on_pairs(a, b, pairs), ba = mae_on_pairs(b, a, pairs), aa = mae_on_pairs(a, a, pairs);
  return {"MAE is a symmetric metric", ab == ba && aa == 0.0 && ab > 0.0, "mae " + show(ab)};
}

}  // namespace

std::vector<CheckResult> run_checks() {
  const std::vector<std::function<CheckResult()>> checks{
      softmax_shift,         objective_gradient, zero_alpha_oracle, contrast_cancellation, fisher_probe,
      debias_schedule,       checkpoint_round_trip, grid_determinism, mae_symmetry};
  std::vector<CheckResult> results;
  for (const auto& check : checks) {
    try {
      results.push_back(check());
    } catch (const std::exception& e) {
      results.push_back({"(check threw)", false, e.what()});
    }
  }
  return results;
}

}  // namespace cpat::cli
