#pragma once

#include "cpat/models.hpp"

#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

namespace cpat {

/// Row-stochastic |V| x |V| matrix; rows must sum to one within 1e-9.
class TransitionMatrix {
 public:
  static constexpr double kRowTolerance = 1e-9;

  explicit TransitionMatrix(Matrix values);

  const Matrix& values() const { return values_; }
  Eigen::Index size() const { return values_.rows(); }
  double operator()(Eigen::Index u, Eigen::Index v) const { return values_(u, v); }

 private:
  Matrix values_;
};

/// Largest per-row total-variation distance between two transition matrices.
double max_row_tv(const Matrix& a, const Matrix& b);

struct FitReport {
  bool exact = false;       // closed-form solve (|V| <= d) vs iterative KL fit
  double max_row_tv = 0.0;  // against M0 at the unperturbed embeddings
  double mean_row_kl = 0.0;
  std::size_t iterations = 0;
};

struct GroundTruthFit {
  BigramParams theta;
  FitReport report;
};

/// Solves for a dropout-free bigram net that reproduces M0 at the table rows.
/// W1 is the identity and b1 zero, so the features are relu(X_u); the output
/// layer is a least-squares solve on log-probabilities when |V| <= d and an
/// Adam KL fit otherwise.
GroundTruthFit fit_ground_truth_model(const TransitionMatrix& m0, const EmbeddingTable& table,
                                      std::size_t max_steps = 50000);

struct World {
  ModelDims dims;
  double alpha = 0.0;
  Vector pi0;
  TransitionMatrix m0;
  EmbeddingTable table;
  BigramParams theta0;
  GroundTruthPerturbParams beta0;
  FitReport fit;
};

World build_world(RngStream& rng, const ModelDims& dims, double alpha);

using TokenPair = std::pair<TokenId, TokenId>;
using PairSet = std::vector<TokenPair>;  // sorted, unique

struct Corpus {
  std::vector<TokenSequence> sequences;
  Eigen::Index vocab = 0;
  std::size_t max_len = 0;
  PairSet seen_pairs;

  std::size_t size() const { return sequences.size(); }
};

/// Validates the sequences and derives the seen-pair set.
Corpus make_corpus(std::vector<TokenSequence> sequences, Eigen::Index vocab, std::size_t max_len);

Corpus generate_corpus(const World& world, RngStream& rng, std::size_t n, std::size_t length);

/// Marginal transition matrix of the data-generating process, integrating the
/// latent perturbation by Monte Carlo (exact single evaluation when alpha = 0).
TransitionMatrix oracle_transition(const World& world, std::size_t n_mc, RngStream& rng);

PairSet unseen_pairs(const Corpus& corpus, Eigen::Index vocab);
PairSet all_pairs(Eigen::Index vocab);

// Text format: header "# vocab=<V> len=<L> seed=<s>", then one sequence per
// line as space-separated token ids.
void write_corpus(std::ostream& out, const Corpus& corpus, std::uint64_t seed);

struct CorpusFile {
  Corpus corpus;
  std::uint64_t seed = 0;
};

CorpusFile read_corpus(std::istream& in);

}  // namespace cpat
