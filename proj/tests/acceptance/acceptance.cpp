// Acceptance run: one PASS/FAIL line per criterion; exits nonzero on any FAIL.
#include "cpat/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

namespace {

using namespace cpat;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* pattern, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, a);
  return buf;
}

std::string num(double x) { return fmt("%.4g", x); }

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<TokenSequence> random_sequences(RngStream& rng, std::size_t n, std::size_t max_len, TokenId vocab) {
  std::vector<TokenSequence> out(n);
  for (auto& seq : out) {
    seq.resize(2 + rng() % (max_len - 1));
    for (auto& t : seq) t = static_cast<TokenId>(rng() % vocab);
  }
  return out;
}

ModelParams random_small_params(RngStream& rng) {
  ModelParams p = init_model_params(ModelDims{6, 4, 3, 5, 5}, 0.0, rng);
  p.theta.w2 *= 3.0;
  p.beta.w2 *= 2.0;
  p.beta.encoder.b = gaussian_vector(rng, p.beta.encoder.b.size());
  return p;
}

// Per-replication differences a - b for one (vocab, alpha), paired by rep.
MeanSe paired_difference(const std::vector<ResultRow>& rows, double alpha, const std::string& a,
                         const std::string& b) {
  std::map<std::size_t, double> left, right;
  for (const auto& r : rows) {
    if (r.error || r.alpha != alpha || std::isnan(r.mae_unseen)) continue;
    if (r.method == a) left[r.rep] = r.mae_unseen;
    if (r.method == b) right[r.rep] = r.mae_unseen;
  }
  std::vector<double> diffs;
  for (const auto& [rep, value] : left)
    if (right.count(rep)) diffs.push_back(value - right.at(rep));
  return mean_and_se(diffs);
}

const SummaryRow* find_summary(const std::vector<SummaryRow>& summary, double alpha, const std::string& method) {
  for (const auto& s : summary)
    if (s.alpha == alpha && s.method == method) return &s;
  return nullptr;
}

Outcome gradient_correctness() {
  const auto start = Clock::now();
  RngStream rng = rng_new(1001);
  const ParamLayout layout(ModelDims{6, 4, 3, 5, 5});
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const ModelParams params = random_small_params(rng);
    const EmbeddingTable table = build_embedding_table(rng, 6, 4);
    const auto batch = random_sequences(rng, 3, 6, 6);
    const ScoreEngine sampler(params, table, batch);
    const TermBatch terms = sample_objective_terms(sampler, batch, rng, 2, true, false);
    const GradFunction f = [&](const Vector& flat, Vector* grad) {
      const ModelParams p = unpack(layout, flat, 0.0);
      return ScoreEngine(p, table, batch).evaluate(terms, grad);
    };
    worst = std::max(worst, grad_check(f, pack(params), 1e-5));
  }
  const double elapsed = seconds_since(start);
  return {worst <= 1e-4 && elapsed < 30.0,
          "20 instances, worst relative error " + num(worst) + " (bound 1e-4), " + num(elapsed) + " s"};
}

Outcome fisher_consistency() {
  const auto start = Clock::now();
  RngStream rng = rng_new(1002);
  const ModelParams params = random_small_params(rng);
  const EmbeddingTable table = build_embedding_table(rng, 6, 4);
  RngStream probe_rng = rng.split("probe");
  const ProbeResult at_truth = fisher_consistency_probe(params, table, 20000, 5, 2, probe_rng);
  ModelParams shifted = params;
  shifted.theta.b2[0] += 1.0;
  RngStream power_rng = rng.split("power");
  const ProbeResult off_truth = fisher_consistency_probe(params, table, 20000, 5, 2, power_rng, &shifted);
  const double elapsed = seconds_since(start);
  return {at_truth.within(4.0) && !off_truth.within(4.0) && elapsed < 120.0,
          "n_mc 20000: max |z| " + num(at_truth.max_abs_z()) + " at the generator, " + num(off_truth.max_abs_z()) +
              " at a shifted gamma, " + num(elapsed) + " s"};
}

Outcome zero_alpha_reduction() {
  const auto start = Clock::now();
  RngStream rng = rng_new(1003);
  const World world = build_world(rng, ModelDims{10, 50, 8, 64, 64}, 0.0);
  RngStream oracle_rng = rng.split("oracle");
  const TransitionMatrix oracle = oracle_transition(world, 20000, oracle_rng);
  const double tv = max_row_tv(oracle.values(), world.m0.values());
  const double elapsed = seconds_since(start);
  return {tv <= 1e-6 && elapsed < 10.0, "|V|=10: max row TV " + num(tv) + ", " + num(elapsed) + " s"};
}

Outcome consistency_trend(const ExperimentSettings& defaults) {
  const auto start = Clock::now();
  const std::vector<std::size_t> sizes{100, 500, 2000};
  std::vector<MeanSe> stats;
  std::string detail = "mean mae_all";
  for (std::size_t n : sizes) {
    ExperimentSettings settings = defaults;
    settings.n = n;
    std::vector<double> maes;
    for (std::size_t rep = 0; rep < 5; ++rep) {
      const auto rows = run_cell(10, 0.5, {"cp"}, rep, replication_seed(4004, 10, rep), settings);
      if (rows[0].error) return {false, "n=" + std::to_string(n) + " failed: " + *rows[0].error};
      maes.push_back(rows[0].mae_all);
    }
    stats.push_back(mean_and_se(maes));
    detail += " n=" + std::to_string(n) + ": " + num(stats.back().mean) + " (se " + num(stats.back().se) + ")";
  }
  int inversions = 0;
  bool within = true;
  for (std::size_t i = 1; i < stats.size(); ++i) {
    if (stats[i].mean <= stats[i - 1].mean) continue;
    ++inversions;
    within = within && stats[i].mean - stats[i - 1].mean <= 2.0 * std::hypot(stats[i].se, stats[i - 1].se);
  }
  const double elapsed = seconds_since(start);
  return {inversions <= 1 && within && elapsed < 600.0,
          detail + "; " + std::to_string(inversions) + " inversion(s), " + num(elapsed) + " s"};
}

struct FigureRun {
  GridResult alpha_half;  // mle, cp, train_only, test_only at alpha 0.5
  GridResult alpha_one;   // mle, cp at alpha 1.0
  double seconds = 0.0;
};

FigureRun figure_run(const ExperimentSettings& settings) {
  const auto start = Clock::now();
  FigureRun run;
  run.alpha_half = run_replications({{50}, {0.5}, {"mle", "cp", "train_only", "test_only"}}, 10, 5005, settings);
  run.alpha_one = run_replications({{50}, {1.0}, {"mle", "cp"}}, 10, 5005, settings);
  run.seconds = seconds_since(start);
  return run;
}

Outcome directional_reproduction(const FigureRun& run) {
  bool no_worse = true, significant = false;
  std::string detail;
  for (const GridResult* grid : {&run.alpha_half, &run.alpha_one}) {
    const double alpha = grid->rows.front().alpha;
    const SummaryRow* cp = find_summary(grid->summary, alpha, "cp");
    const SummaryRow* mle = find_summary(grid->summary, alpha, "mle");
    if (!cp || !mle || cp->count < 2 || mle->count < 2) return {false, "missing replications"};
    const MeanSe gap = paired_difference(grid->rows, alpha, "mle", "cp");
    no_worse = no_worse && cp->mean_mae_unseen <= mle->mean_mae_unseen;
    significant = significant || gap.mean > 2.0 * gap.se;
    detail += "alpha=" + num(alpha) + ": cp " + num(cp->mean_mae_unseen) + " (se " + num(cp->se_mae_unseen) +
              ") vs mle " + num(mle->mean_mae_unseen) + " (se " + num(mle->se_mae_unseen) + "), paired gap " +
              num(gap.mean) + " = " + num(gap.se > 0.0 ? gap.mean / gap.se : 0.0) + " SE, unpaired " +
              num((mle->mean_mae_unseen - cp->mean_mae_unseen) / std::hypot(cp->se_mae_unseen, mle->se_mae_unseen)) +
              " SE; ";
  }
  return {no_worse && significant && run.seconds < 1800.0, detail + num(run.seconds) + " s for both alphas"};
}

Outcome optimization_diagnostic(const ExperimentSettings& settings, std::vector<TrainHistory>& histories) {
  const auto start = Clock::now();
  int decreased = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const RngStream root(6006 + seed);
    RngStream world_rng = root.split("world");
    const World world = build_world(world_rng, ModelDims{50, settings.dim, settings.train.latent_dim, settings.train.hidden_dim, settings.train.gen_hidden_dim}, 0.5);
    RngStream corpus_rng = root.split("corpus");
    const Corpus corpus = generate_corpus(world, corpus_rng, settings.n, settings.length);
    TrainConfig config = settings.train;
    config.seed = root.split("train").fingerprint();
    const TrainResult result = train(corpus, world.table, config);
    histories.push_back(result.history);
    const ModelParams init = initial_params(world.table, config);
    RngStream psi_a = root.split("psi"), psi_b = root.split("psi");
    const double before = psi_mean(init, world.table, corpus.sequences, psi_a, config.perturbation_samples).norm;
    const double after = psi_mean(result.params, world.table, corpus.sequences, psi_b, config.perturbation_samples).norm;
    decreased += after < before;
    detail += num(before) + " -> " + num(after) + "; ";
  }
  const double elapsed = seconds_since(start);
  return {decreased == 5 && elapsed < 600.0,
          std::to_string(decreased) + "/5 seeds decrease ||Psi||: " + detail + num(elapsed) + " s"};
}

Outcome ablation_directionality(const FigureRun& run) {
  const auto& rows = run.alpha_half.rows;
  const auto& summary = run.alpha_half.summary;
  // full = cp, none = mle under the shared trainings.
  const SummaryRow* full = find_summary(summary, 0.5, "cp");
  const SummaryRow* none = find_summary(summary, 0.5, "mle");
  const SummaryRow* test_only = find_summary(summary, 0.5, "test_only");
  const SummaryRow* train_only = find_summary(summary, 0.5, "train_only");
  if (!full || !none || !test_only || !train_only) return {false, "missing ablation cells"};
  const MeanSe vs_none = paired_difference(rows, 0.5, "cp", "mle");
  const MeanSe vs_test = paired_difference(rows, 0.5, "cp", "test_only");
  const bool ok = vs_none.mean <= 2.0 * vs_none.se && vs_test.mean <= 2.0 * vs_test.se;
  return {ok, "full " + num(full->mean_mae_unseen) + ", train_only " + num(train_only->mean_mae_unseen) +
                  ", test_only " + num(test_only->mean_mae_unseen) + ", none " + num(none->mean_mae_unseen) +
                  "; full - none " + num(vs_none.mean) + " (se " + num(vs_none.se) + "), full - test_only " +
                  num(vs_test.mean) + " (se " + num(vs_test.se) + ")"};
}

Outcome grid_determinism() {
  const std::string config = R"(vocab = 8
dim = 8
latent = 3
hidden = 6
gen_hidden = 6
n = 60
length = 6
n_mc = 500
batch_size = 30
epochs = 3
K = 2
debias_start = 3
grid_vocab = 6,8
grid_alpha = 0.5,1
grid_methods = mle,cp,cp_nodebias
n_reps = 2
)";
#ifdef CPAT_BINARY
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "cpat_acceptance_grid";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "grid.cfg") << config;
  std::string outputs[2];
  for (int i = 0; i < 2; ++i) {
    const fs::path out = dir / ("run" + std::to_string(i));
    const std::string command = std::string(CPAT_BINARY) + " grid --seed 77 --config " + (dir / "grid.cfg").string() +
                                " --out " + out.string() + " > /dev/null 2>&1";
    if (std::system(command.c_str()) != 0) return {false, "grid command failed"};
    std::ifstream in(out / "results.csv", std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    outputs[i] = s.str();
  }
  fs::remove_all(dir);
  const std::size_t lines = static_cast<std::size_t>(std::count(outputs[0].begin(), outputs[0].end(), '\n'));
  return {!outputs[0].empty() && outputs[0] == outputs[1],
          "two grid runs, " + std::to_string(lines) + " CSV lines each, byte-identical: " +
              (outputs[0] == outputs[1] ? "yes" : "no")};
#else
  (void)config;
  return {false, "built without the command-line tool"};
#endif
}

Outcome step_arithmetic(const ExperimentSettings& settings, const std::vector<TrainHistory>& histories) {
  if (histories.empty()) return {false, "no default training history"};
  const std::size_t planned = planned_steps(settings.n, settings.train);
  bool ok = planned == 50;
  for (const auto& history : histories) {
    ok = ok && history.records.size() == 50;
    for (const auto& r : history.records) ok = ok && r.debias == (r.step >= 10);
  }
  const auto& first = histories.front().records;
  std::size_t flip = 0;
  for (const auto& r : first)
    if (r.debias) {
      flip = r.step;
      break;
    }
  return {ok, "planned " + std::to_string(planned) + " steps, recorded " + std::to_string(first.size()) +
                  ", first debiased step " + std::to_string(flip) + " (checked on " +
                  std::to_string(histories.size()) + " runs)"};
}

}  // namespace

int main() {
  ExperimentSettings defaults;  // d=50, n=500, L=10, K=5, 25 epochs, batch 500, duplication, debias from step 10
  int failures = 0;
  const auto report = [&](int id, const std::string& name, const Outcome& outcome) {
    std::cout << (outcome.passed ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << outcome.detail
              << std::endl;
    failures += !outcome.passed;
  };
  const auto guarded = [](const std::function<Outcome()>& run) -> Outcome {
    try {
      return run();
    } catch (const std::exception& e) {
      return {false, std::string("threw: ") + e.what()};
    }
  };

  report(1, "gradient correctness", guarded(gradient_correctness));
  report(2, "score mean is zero at the generator", guarded(fisher_consistency));
  report(3, "alpha = 0 reduction", guarded(zero_alpha_reduction));
  report(4, "consistency trend", guarded([&] { return consistency_trend(defaults); }));

  std::optional<FigureRun> figure;
  std::string figure_error;
  try {
    figure = figure_run(defaults);
  } catch (const std::exception& e) {
    figure_error = e.what();
  }
  report(5, "cp beats mle on unseen pairs", figure ? directional_reproduction(*figure) : Outcome{false, figure_error});

  std::vector<TrainHistory> histories;
  report(6, "estimating equation shrinks", guarded([&] { return optimization_diagnostic(defaults, histories); }));
  report(7, "ablation ordering", figure ? ablation_directionality(*figure) : Outcome{false, figure_error});
  report(8, "grid determinism", guarded(grid_determinism));
  report(9, "step count and debias schedule", guarded([&] { return step_arithmetic(defaults, histories); }));

  std::cout << (9 - failures) << "/9 criteria passed" << std::endl;
  return failures == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
