#include "cpat/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace cpat {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<ResultRow> rows_for_world(const World& world, const std::vector<MethodSpec>& methods, const RngStream& root,
                                      const ExperimentSettings& settings, std::size_t rep, std::uint64_t seed) {
  std::vector<ResultRow> rows;
  for (const auto& m : methods) {
    ResultRow row;
    row.vocab = world.dims.vocab;
    row.alpha = world.alpha;
    row.method = m.tag;
    row.rep = rep;
    row.seed = seed;
    rows.push_back(std::move(row));
  }

  try {
    RngStream corpus_rng = root.split("corpus");
    const Corpus corpus = generate_corpus(world, corpus_rng, settings.n, settings.length);
    RngStream oracle_rng = root.split("oracle");
    const TransitionMatrix oracle = oracle_transition(world, settings.n_mc, oracle_rng);
    const PairSet unseen = unseen_pairs(corpus, world.dims.vocab);
    const PairSet everything = all_pairs(world.dims.vocab);
    const std::uint64_t train_seed = root.split("train").fingerprint();

    std::map<std::pair<int, std::optional<std::size_t>>, TrainResult> trained;
    for (std::size_t i = 0; i < methods.size(); ++i) {
      const MethodSpec& spec = methods[i];
      ResultRow& row = rows[i];
      const auto started = std::chrono::steady_clock::now();
      try {
        TrainConfig config = settings.train;
        config.seed = train_seed;
        if (!spec.configured_debias) config.debias_start_step = spec.debias_start_step;
        if (spec.trainer == Trainer::kMle) config.debias_start_step.reset();
        const auto key = std::make_pair(static_cast<int>(spec.trainer), config.debias_start_step);
        auto it = trained.find(key);
        if (it == trained.end()) {
          TrainResult result = spec.trainer == Trainer::kMle ? train_mle_baseline(corpus, world.table, config)
                                                              : train(corpus, world.table, config);
          it = trained.emplace(key, std::move(result)).first;
        }
        const ModelParams& params = it->second.params;
        RngStream matrix_rng = root.split("model_matrix");
        const TransitionMatrix estimate =
            model_transition_matrix(params, world.table, settings.n_mc, matrix_rng, spec.inference);
        row.mae_unseen = unseen.empty() ? kNaN : mae_on_pairs(estimate.values(), oracle.values(), unseen);
        row.mae_all = mae_on_pairs(estimate.values(), oracle.values(), everything);
        RngStream psi_rng = root.split("psi");
        row.psi_norm_final =
            psi_mean(params, world.table, corpus.sequences, psi_rng, config.perturbation_samples, true).norm;
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      if (settings.record_timing)
        row.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
  } catch (const std::exception& e) {
    for (auto& row : rows) row.error = e.what();
  }
  return rows;
}

std::vector<MethodSpec> parse_methods(const std::vector<std::string>& tags) {
  if (tags.empty()) throw InvalidArgument("no methods requested");
  std::vector<MethodSpec> specs;
  for (const auto& tag : tags) specs.push_back(parse_method(tag));
  return specs;
}

std::string csv_number(double value) { return std::isnan(value) ? "nan" : format_number(value); }

double parse_number(const std::string& field) {
  if (field == "nan") return kNaN;
  std::size_t used = 0;
  const double value = std::stod(field, &used);
  if (used != field.size()) throw InvalidArgument("results CSV: bad number '" + field + "'");
  return value;
}

}  // namespace

double mae_on_pairs(const Matrix& estimate, const Matrix& reference, const PairSet& pairs) {
  if (estimate.rows() != reference.rows() || estimate.cols() != reference.cols())
    throw InvalidArgument("mae_on_pairs: shape mismatch");
  if (pairs.empty()) throw InvalidArgument("mae_on_pairs: empty pair set");
  double total = 0.0;
  for (const auto& [u, v] : pairs) {
    if (u >= estimate.rows() || v >= estimate.cols()) throw InvalidArgument("mae_on_pairs: pair out of range");
    total += std::abs(estimate(u, v) - reference(u, v));
  }
  return total / static_cast<double>(pairs.size());
}

MethodSpec parse_method(const std::string& tag) {
  MethodSpec spec;
  spec.tag = tag;
  if (tag == "mle" || tag == "none") {
    spec.trainer = Trainer::kMle;
    spec.inference = PerturbMode::kUnperturbed;
  } else if (tag == "test_only") {
    spec.trainer = Trainer::kMle;
    spec.inference = PerturbMode::kPerturbed;
  } else if (tag == "cp" || tag == "full") {
    spec.trainer = Trainer::kPerturbed;
  } else if (tag == "train_only") {
    spec.trainer = Trainer::kPerturbed;
    spec.inference = PerturbMode::kUnperturbed;
  } else if (tag == "cp_nodebias") {
    spec.configured_debias = false;
  } else if (tag.rfind("cp_debias", 0) == 0 && tag.size() > 9 &&
             std::all_of(tag.begin() + 9, tag.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    spec.configured_debias = false;
    spec.debias_start_step = std::stoul(tag.substr(9));
  } else {
    throw InvalidArgument("unknown method tag '" + tag + "'");
  }
  return spec;
}

std::string_view to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::kFull: return "full";
    case AblationMode::kTrainOnly: return "train_only";
    case AblationMode::kTestOnly: return "test_only";
    case AblationMode::kNone: return "none";
  }
  return "unknown";
}

AblationMode parse_ablation_mode(std::string_view text) {
  for (AblationMode m : {AblationMode::kFull, AblationMode::kTrainOnly, AblationMode::kTestOnly, AblationMode::kNone})
    if (to_string(m) == text) return m;
  throw InvalidArgument("unknown ablation mode '" + std::string(text) + "'");
}

MethodSpec ablation_method(AblationMode mode) { return parse_method(std::string(to_string(mode))); }

MeanSe mean_and_se(const std::vector<double>& values) {
  if (values.empty()) return {kNaN, kNaN};
  const auto n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / n;
  if (values.size() < 2) return {mean, kNaN};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

std::uint64_t replication_seed(std::uint64_t base_seed, Eigen::Index vocab, std::size_t rep) {
  return RngStream(base_seed).split("vocab" + std::to_string(vocab)).split("rep" + std::to_string(rep)).fingerprint();
}

std::vector<ResultRow> run_cell(Eigen::Index vocab, double alpha, const std::vector<std::string>& methods,
                                std::size_t rep, std::uint64_t seed, const ExperimentSettings& settings) {
  const std::vector<MethodSpec> specs = parse_methods(methods);
  const RngStream root(seed);
  const ModelDims dims{vocab, settings.dim, settings.train.latent_dim, settings.train.hidden_dim,
                       settings.train.gen_hidden_dim};
  try {
    RngStream world_rng = root.split("world");
    const World world = build_world(world_rng, dims, alpha);
    return rows_for_world(world, specs, root, settings, rep, seed);
  } catch (const std::exception& e) {
    std::vector<ResultRow> rows;
    for (const auto& spec : specs) {
      ResultRow row;
      row.vocab = vocab;
      row.alpha = alpha;
      row.method = spec.tag;
      row.rep = rep;
      row.seed = seed;
      row.mae_unseen = row.mae_all = row.psi_norm_final = kNaN;
      row.error = e.what();
      rows.push_back(std::move(row));
    }
    return rows;
  }
}

GridResult run_replications(const GridSpec& grid, std::size_t n_reps, std::uint64_t base_seed,
                            const ExperimentSettings& settings, std::size_t jobs) {
  if (n_reps < 1) throw InvalidArgument("run_replications: n_reps must be positive");
  if (grid.vocab_sizes.empty() || grid.alphas.empty()) throw InvalidArgument("run_replications: empty grid");
  parse_methods(grid.methods);  // validate tags up front

  struct Task {
    Eigen::Index vocab;
    double alpha;
    std::size_t rep;
  };
  std::vector<Task> tasks;
  for (Eigen::Index vocab : grid.vocab_sizes)
    for (double alpha : grid.alphas)
      for (std::size_t rep = 0; rep < n_reps; ++rep) tasks.push_back({vocab, alpha, rep});

  std::vector<std::vector<ResultRow>> outputs(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      const Task& t = tasks[i];
      outputs[i] = run_cell(t.vocab, t.alpha, grid.methods, t.rep, replication_seed(base_seed, t.vocab, t.rep), settings);
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, tasks.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  // Reorder to vocab, alpha, method, rep.
  GridResult result;
  std::size_t cell = 0;
  for (std::size_t vi = 0; vi < grid.vocab_sizes.size(); ++vi) {
    for (std::size_t ai = 0; ai < grid.alphas.size(); ++ai, cell += n_reps) {
      for (std::size_t m = 0; m < grid.methods.size(); ++m)
        for (std::size_t rep = 0; rep < n_reps; ++rep) result.rows.push_back(outputs[cell + rep][m]);
    }
  }
  result.summary = summarize(result.rows);
  return result;
}

std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows) {
  std::vector<SummaryRow> summary;
  std::vector<std::vector<const ResultRow*>> groups;
  for (const auto& row : rows) {
    auto it = std::find_if(summary.begin(), summary.end(), [&](const SummaryRow& s) {
      return s.vocab == row.vocab && s.alpha == row.alpha && s.method == row.method;
    });
    if (it == summary.end()) {
      summary.push_back(SummaryRow{row.vocab, row.alpha, row.method});
      groups.emplace_back();
      it = summary.end() - 1;
    }
    groups[static_cast<std::size_t>(it - summary.begin())].push_back(&row);
  }
  for (std::size_t g = 0; g < summary.size(); ++g) {
    std::vector<double> unseen, all, psi;
    for (const ResultRow* row : groups[g]) {
      if (row->error) continue;
      if (!std::isnan(row->mae_unseen)) unseen.push_back(row->mae_unseen);
      all.push_back(row->mae_all);
      psi.push_back(row->psi_norm_final);
    }
    SummaryRow& s = summary[g];
    s.count = all.size();
    const MeanSe u = mean_and_se(unseen), a = mean_and_se(all), p = mean_and_se(psi);
    s.mean_mae_unseen = u.mean;
    s.se_mae_unseen = u.se;
    s.mean_mae_all = a.mean;
    s.se_mae_all = a.se;
    s.mean_psi_norm = p.mean;
    s.se_psi_norm = p.se;
  }
  return summary;
}

std::vector<ResultRow> ablation_run(const World& world, const ExperimentSettings& settings,
                                    const std::vector<AblationMode>& modes, RngStream& rng) {
  if (modes.empty()) throw InvalidArgument("ablation_run: no modes requested");
  std::vector<MethodSpec> specs;
  for (AblationMode m : modes) specs.push_back(ablation_method(m));
  return rows_for_world(world, specs, rng, settings, 0, rng.fingerprint());
}

std::string format_number(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", value);
  return buf;
}

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
  out << "vocab,alpha,method,rep,seed,mae_unseen,mae_all,psi_norm,wall_s\n";
  for (const auto& r : rows) {
    out << r.vocab << ',' << format_number(r.alpha) << ',' << r.method << ',' << r.rep << ',' << r.seed << ',';
    if (r.error) {
      out << "error,error,error";
    } else {
      out << csv_number(r.mae_unseen) << ',' << csv_number(r.mae_all) << ',' << csv_number(r.psi_norm_final);
    }
    out << ',' << format_number(r.wall_time_seconds) << '\n';
  }
}

std::vector<ResultRow> read_results_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "vocab,alpha,method,rep,seed,mae_unseen,mae_all,psi_norm,wall_s")
    throw InvalidArgument("results CSV: unexpected header");
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 9) throw InvalidArgument("results CSV: expected 9 fields in '" + line + "'");
    ResultRow r;
    r.vocab = std::stol(f[0]);
    r.alpha = parse_number(f[1]);
    r.method = f[2];
    r.rep = std::stoul(f[3]);
    r.seed = std::stoull(f[4]);
    if (f[5] == "error") {
      r.error = "error";
      r.mae_unseen = r.mae_all = r.psi_norm_final = kNaN;
    } else {
      r.mae_unseen = parse_number(f[5]);
      r.mae_all = parse_number(f[6]);
      r.psi_norm_final = parse_number(f[7]);
    }
    r.wall_time_seconds = parse_number(f[8]);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "vocab,alpha,method,n_ok,mean_mae_unseen,se_mae_unseen,mean_mae_all,se_mae_all,mean_psi_norm,se_psi_norm\n";
  for (const auto& s : rows) {
    out << s.vocab << ',' << format_number(s.alpha) << ',' << s.method << ',' << s.count << ','
        << csv_number(s.mean_mae_unseen) << ',' << csv_number(s.se_mae_unseen) << ',' << csv_number(s.mean_mae_all)
        << ',' << csv_number(s.se_mae_all) << ',' << csv_number(s.mean_psi_norm) << ',' << csv_number(s.se_psi_norm)
        << '\n';
  }
}

}  // namespace cpat
