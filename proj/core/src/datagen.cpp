#include "cpat/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace cpat {
namespace {

constexpr double kExactFitTolerance = 1e-6;
constexpr double kKlTolerance = 1e-6;

Matrix relu_features(const EmbeddingTable& table) { return table.table().cwiseMax(0.0); }

// Rows of softmax(logits) compared with rows of m0.
FitReport measure_fit(const Matrix& logits, const Matrix& m0) {
  FitReport report;
  double kl_sum = 0.0;
  for (Eigen::Index u = 0; u < m0.rows(); ++u) {
    const Vector lp = log_softmax(logits.row(u).transpose());
    const Vector p = lp.array().exp().matrix();
    report.max_row_tv = std::max(report.max_row_tv, 0.5 * (p - m0.row(u).transpose()).cwiseAbs().sum());
    for (Eigen::Index v = 0; v < m0.cols(); ++v) {
      const double q = m0(u, v);
      if (q > 0.0) kl_sum += q * (std::log(q) - lp[v]);
    }
  }
  report.mean_row_kl = kl_sum / static_cast<double>(m0.rows());
  return report;
}

BigramParams passthrough_params(Eigen::Index dim, const Eigen::MatrixXd& solution) {
  // solution is (d + 1) x |V|: output weights stacked over the bias row.
  BigramParams theta;
  theta.w1 = Matrix::Identity(dim, dim);
  theta.b1 = Vector::Zero(dim);
  theta.w2 = solution.topRows(dim).transpose();
  theta.b2 = solution.row(dim).transpose();
  theta.dropout_rate = 0.0;
  return theta;
}

}  // namespace

TransitionMatrix::TransitionMatrix(Matrix values) : values_(std::move(values)) {
  if (values_.rows() != values_.cols() || values_.rows() == 0)
    throw InvalidArgument("TransitionMatrix: must be square and non-empty");
  for (Eigen::Index u = 0; u < values_.rows(); ++u) {
    if ((values_.row(u).array() < 0.0).any() || !values_.row(u).allFinite())
      throw InvalidArgument("TransitionMatrix: negative or non-finite entry in row " + std::to_string(u));
    if (std::abs(values_.row(u).sum() - 1.0) > kRowTolerance)
      throw InvalidArgument("TransitionMatrix: row " + std::to_string(u) + " does not sum to one");
  }
}

double max_row_tv(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidArgument("max_row_tv: shape mismatch");
  return 0.5 * (a - b).cwiseAbs().rowwise().sum().maxCoeff();
}

GroundTruthFit fit_ground_truth_model(const TransitionMatrix& m0, const EmbeddingTable& table, std::size_t max_steps) {
  const Eigen::Index vocab = m0.size();
  const Eigen::Index dim = table.dim();
  if (table.vocab_size() != vocab) throw InvalidArgument("fit_ground_truth_model: vocabulary mismatch");
  if ((m0.values().array() <= 0.0).any())
    throw InvalidArgument("fit_ground_truth_model: M0 must have strictly positive entries");

  Eigen::MatrixXd design(vocab, dim + 1);
  design.leftCols(dim) = relu_features(table);
  design.col(dim).setOnes();
  const Eigen::MatrixXd log_m0 = m0.values().array().log().matrix();

  if (vocab <= dim) {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(design);
    if (cod.rank() == vocab) {
      const Eigen::MatrixXd solution = cod.solve(log_m0);
      GroundTruthFit fit{passthrough_params(dim, solution), measure_fit(design * solution, m0.values())};
      fit.report.exact = true;
      if (fit.report.max_row_tv > kExactFitTolerance)
        throw NumericalError("fit_ground_truth_model: exact fit residual " + std::to_string(fit.report.max_row_tv) +
                             " exceeds tolerance");
      return fit;
    }
  }

  // Iterative fit: full-batch Adam on mean row KL(M0 || softmax(design * X)).
  Eigen::MatrixXd solution = Eigen::MatrixXd::Zero(dim + 1, vocab);
  solution.row(dim) = m0.values().colwise().mean().array().log().matrix();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim + 1, vocab);
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(dim + 1, vocab);
  constexpr double kLr = 0.02, kB1 = 0.9, kB2 = 0.999, kEps = 1e-8;
  double b1t = 1.0, b2t = 1.0;
  double best_kl = std::numeric_limits<double>::infinity();
  double checkpoint_kl = best_kl;
  Eigen::MatrixXd best = solution;
  std::size_t step = 0;
  for (; step < max_steps; ++step) {
    Eigen::MatrixXd logits = design * solution;
    double kl = 0.0;
    for (Eigen::Index u = 0; u < vocab; ++u) {
      auto row = logits.row(u);
      const double top = row.maxCoeff();
      const double lse = top + std::log((row.array() - top).exp().sum());
      kl += (m0.values().row(u).array() * (log_m0.row(u).array() - (row.array() - lse))).sum();
      row = (row.array() - lse).exp().matrix();  // now probabilities
    }
    kl /= static_cast<double>(vocab);
    if (kl < best_kl) {
      best_kl = kl;
      best = solution;
    }
    if (kl <= kKlTolerance) break;
    if (step % 1000 == 999) {
      if (checkpoint_kl - best_kl < 1e-6 * checkpoint_kl) break;  // stagnated
      checkpoint_kl = best_kl;
    }
    const Eigen::MatrixXd grad = design.transpose() * (logits - m0.values()) / static_cast<double>(vocab);
    m = kB1 * m + (1.0 - kB1) * grad;
    v = kB2 * v + (1.0 - kB2) * grad.cwiseAbs2();
    b1t *= kB1;
    b2t *= kB2;
    solution.array() -= kLr * (m.array() / (1.0 - b1t)) / ((v.array() / (1.0 - b2t)).sqrt() + kEps);
  }
  GroundTruthFit fit{passthrough_params(dim, best), measure_fit(design * best, m0.values())};
  fit.report.exact = false;
  fit.report.iterations = step;
  if (vocab <= dim && fit.report.max_row_tv > kExactFitTolerance)
    throw NumericalError("fit_ground_truth_model: fit residual " + std::to_string(fit.report.max_row_tv) +
                         " exceeds tolerance");
  return fit;
}

World build_world(RngStream& rng, const ModelDims& dims, double alpha) {
  dims.validate();
  if (!(alpha >= 0.0)) throw InvalidArgument("build_world: alpha must be non-negative");
  RngStream m0_rng = rng.split("m0");
  RngStream table_rng = rng.split("embedding");
  RngStream beta0_rng = rng.split("beta0");

  Matrix m0(dims.vocab, dims.vocab);
  for (Eigen::Index u = 0; u < dims.vocab; ++u) m0.row(u) = dirichlet_row(m0_rng, 0.5, dims.vocab).values().transpose();
  TransitionMatrix transitions(std::move(m0));
  EmbeddingTable table = build_embedding_table(table_rng, dims.vocab, dims.dim);
  GroundTruthFit fit = fit_ground_truth_model(transitions, table);
  return World{dims,
               alpha,
               Vector::Constant(dims.vocab, 1.0 / static_cast<double>(dims.vocab)),
               std::move(transitions),
               std::move(table),
               std::move(fit.theta),
               init_ground_truth_perturb(dims, beta0_rng),
               fit.report};
}

Corpus make_corpus(std::vector<TokenSequence> sequences, Eigen::Index vocab, std::size_t max_len) {
  Corpus corpus;
  corpus.vocab = vocab;
  corpus.max_len = max_len;
  for (const auto& seq : sequences) {
    if (seq.empty()) throw InvalidArgument("make_corpus: zero-length sequence");
    if (seq.size() > max_len) throw InvalidArgument("make_corpus: sequence longer than the declared maximum");
    for (std::size_t t = 0; t < seq.size(); ++t) {
      if (seq[t] >= static_cast<TokenId>(vocab)) throw InvalidArgument("make_corpus: token out of vocabulary");
      if (t > 0) corpus.seen_pairs.emplace_back(seq[t - 1], seq[t]);
    }
  }
  std::sort(corpus.seen_pairs.begin(), corpus.seen_pairs.end());
  corpus.seen_pairs.erase(std::unique(corpus.seen_pairs.begin(), corpus.seen_pairs.end()), corpus.seen_pairs.end());
  corpus.sequences = std::move(sequences);
  return corpus;
}

Corpus generate_corpus(const World& world, RngStream& rng, std::size_t n, std::size_t length) {
  if (n < 1) throw InvalidArgument("generate_corpus: n must be positive");
  if (length < 2) throw InvalidArgument("generate_corpus: length must be at least 2");
  const ProbVector initial(world.pi0);
  std::vector<TokenSequence> sequences(n);
  for (auto& seq : sequences) {
    seq.reserve(length);
    seq.push_back(static_cast<TokenId>(categorical_sample(rng, initial)));
    for (std::size_t t = 1; t < length; ++t) {
      const Vector x = world.table.embed(seq.back());
      const Vector w = gaussian_vector(rng, world.dims.latent);
      const Vector x_tilde = x + ground_truth_perturbation(world.beta0, x, w, world.alpha);
      seq.push_back(static_cast<TokenId>(categorical_sample(rng, bigram_probs(world.theta0, x_tilde))));
    }
  }
  return make_corpus(std::move(sequences), world.dims.vocab, length);
}

TransitionMatrix oracle_transition(const World& world, std::size_t n_mc, RngStream& rng) {
  if (n_mc < 1) throw InvalidArgument("oracle_transition: n_mc must be positive");
  const Eigen::Index vocab = world.dims.vocab;
  Matrix out(vocab, vocab);
  if (world.alpha == 0.0) {
    Block inputs = world.table.table().transpose();
    out = bigram_probs_batch(world.theta0, inputs).transpose();
    return TransitionMatrix(std::move(out));
  }
  constexpr std::size_t kChunk = 4096;
  for (Eigen::Index u = 0; u < vocab; ++u) {
    const Vector x = world.table.embed(static_cast<TokenId>(u));
    Vector acc = Vector::Zero(vocab);
    for (std::size_t done = 0; done < n_mc; done += kChunk) {
      const auto cols = static_cast<Eigen::Index>(std::min(kChunk, n_mc - done));
      Block latents(world.dims.latent, cols);
      for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < world.dims.latent; ++i) latents(i, j) = rng.normal();
      Block inputs = ground_truth_perturbation_batch(world.beta0, x, latents, world.alpha);
      inputs.colwise() += x;
      acc += bigram_probs_batch(world.theta0, inputs).rowwise().sum();
    }
    out.row(u) = acc.transpose() / static_cast<double>(n_mc);
  }
  return TransitionMatrix(std::move(out));
}

PairSet all_pairs(Eigen::Index vocab) {
  PairSet pairs;
  pairs.reserve(static_cast<std::size_t>(vocab * vocab));
  for (Eigen::Index u = 0; u < vocab; ++u)
    for (Eigen::Index v = 0; v < vocab; ++v) pairs.emplace_back(static_cast<TokenId>(u), static_cast<TokenId>(v));
  return pairs;
}

PairSet unseen_pairs(const Corpus& corpus, Eigen::Index vocab) {
  const PairSet everything = all_pairs(vocab);
  PairSet unseen;
  std::set_difference(everything.begin(), everything.end(), corpus.seen_pairs.begin(), corpus.seen_pairs.end(),
                      std::back_inserter(unseen));
  return unseen;
}

void write_corpus(std::ostream& out, const Corpus& corpus, std::uint64_t seed) {
  out << "# vocab=" << corpus.vocab << " len=" << corpus.max_len << " seed=" << seed << '\n';
  for (const auto& seq : corpus.sequences) {
    for (std::size_t t = 0; t < seq.size(); ++t) out << (t ? " " : "") << seq[t];
    out << '\n';
  }
}

CorpusFile read_corpus(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw InvalidArgument("read_corpus: missing header");
  long long vocab = -1, len = -1;
  unsigned long long seed = 0;
  if (std::sscanf(header.c_str(), "# vocab=%lld len=%lld seed=%llu", &vocab, &len, &seed) != 3 || vocab < 2 || len < 1)
    throw InvalidArgument("read_corpus: malformed header '" + header + "'");
  std::vector<TokenSequence> sequences;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    TokenSequence seq;
    long long tok = 0;
    while (fields >> tok) {
      if (tok < 0) throw InvalidArgument("read_corpus: negative token on line " + std::to_string(line_no));
      seq.push_back(static_cast<TokenId>(tok));
    }
    if (!fields.eof()) throw InvalidArgument("read_corpus: unparseable token on line " + std::to_string(line_no));
    sequences.push_back(std::move(seq));
  }
  return CorpusFile{make_corpus(std::move(sequences), vocab, static_cast<std::size_t>(len)), seed};
}

}  // namespace cpat
