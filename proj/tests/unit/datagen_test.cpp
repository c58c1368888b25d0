#include "cpat/datagen.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

namespace cpat {
namespace {

ModelDims world_dims(Eigen::Index vocab) { return ModelDims{vocab, 50, 8, 64, 64}; }

World make_world(std::uint64_t seed, Eigen::Index vocab, double alpha) {
  RngStream rng = rng_new(seed);
  return build_world(rng, world_dims(vocab), alpha);
}

double row_tv(const Vector& a, const Vector& b) { return 0.5 * (a - b).cwiseAbs().sum(); }

TEST(TransitionMatrix, ValidatesRows) {
  Matrix ok(2, 2);
  ok << 0.5, 0.5, 0.1, 0.9;
  EXPECT_NO_THROW(TransitionMatrix{ok});
  Matrix bad = ok;
  bad(1, 1) = 0.8;
  EXPECT_THROW(TransitionMatrix{bad}, InvalidArgument);
  bad = ok;
  bad(0, 0) = -0.5;
  bad(0, 1) = 1.5;
  EXPECT_THROW(TransitionMatrix{bad}, InvalidArgument);
  EXPECT_THROW(TransitionMatrix{Matrix(2, 3)}, InvalidArgument);
}

TEST(BuildWorld, DimsAndInvariants) {
  const World world = make_world(1, 50, 0.5);
  EXPECT_EQ(world.dims, world_dims(50));
  EXPECT_EQ(world.alpha, 0.5);
  EXPECT_EQ(world.m0.size(), 50);
  EXPECT_EQ(world.table.vocab_size(), 50);
  EXPECT_EQ(world.table.dim(), 50);
  EXPECT_EQ(world.pi0, Vector::Constant(50, 1.0 / 50));
  EXPECT_EQ(world.theta0.dropout_rate, 0.0);
  EXPECT_EQ(world.beta0.w1.cols(), 8 + 50);
  EXPECT_EQ(world.beta0.w1.rows(), 64);
  EXPECT_EQ(world.beta0.w3.rows(), 50);
  EXPECT_TRUE(world.fit.exact);
  EXPECT_LE(world.fit.max_row_tv, 1e-6);
  EXPECT_THROW(make_world(1, 10, -0.1), InvalidArgument);
}

TEST(BuildWorld, SameSeedSameWorld) {
  const World a = make_world(2, 10, 1.0), b = make_world(2, 10, 1.0);
  EXPECT_EQ(a.m0.values(), b.m0.values());
  EXPECT_EQ(a.table.table(), b.table.table());
  EXPECT_EQ(a.theta0.w2, b.theta0.w2);
  EXPECT_EQ(a.theta0.b2, b.theta0.b2);
  EXPECT_EQ(a.beta0.w1, b.beta0.w1);
  EXPECT_EQ(a.beta0.w3, b.beta0.w3);
  EXPECT_NE(a.m0.values(), make_world(3, 10, 1.0).m0.values());
}

TEST(FitGroundTruth, ExactFitReproducesM0) {
  const World world = make_world(4, 10, 0.0);
  // Independent check: evaluate the fitted net directly.
  double worst = 0.0;
  for (Eigen::Index u = 0; u < 10; ++u) {
    const ProbVector p = bigram_probs(world.theta0, world.table.embed(static_cast<TokenId>(u)));
    worst = std::max(worst, row_tv(p.values(), world.m0.values().row(u).transpose()));
  }
  EXPECT_LE(worst, 1e-6);
  EXPECT_EQ(world.theta0.w1, Matrix::Identity(50, 50));
  EXPECT_TRUE(world.theta0.b1.isZero(0.0));
}

TEST(FitGroundTruth, UniformRowsFitWithZeroResidual) {
  RngStream rng = rng_new(5);
  const EmbeddingTable table = build_embedding_table(rng, 10, 50);
  const GroundTruthFit fit = fit_ground_truth_model(TransitionMatrix(Matrix::Constant(10, 10, 0.1)), table);
  EXPECT_LE(fit.report.max_row_tv, 1e-12);
  for (Eigen::Index u = 0; u < 10; ++u) {
    const ProbVector p = bigram_probs(fit.theta, table.embed(static_cast<TokenId>(u)));
    EXPECT_LE(row_tv(p.values(), Vector::Constant(10, 0.1)), 1e-12);
  }
}

TEST(FitGroundTruth, LargeVocabularyIsBestEffort) {
  RngStream rng = rng_new(6);
  const EmbeddingTable table = build_embedding_table(rng, 60, 50);
  Matrix m0(60, 60);
  for (Eigen::Index u = 0; u < 60; ++u) m0.row(u) = dirichlet_row(rng, 0.5, 60).values().transpose();
  const GroundTruthFit fit = fit_ground_truth_model(TransitionMatrix(m0), table, 3000);
  EXPECT_FALSE(fit.report.exact);
  EXPECT_LE(fit.report.iterations, 3000u);
  EXPECT_TRUE(std::isfinite(fit.report.mean_row_kl));
  EXPECT_GT(fit.report.mean_row_kl, 0.0);
  // Starting point is the column-mean bigram; the fit must improve on it.
  double start_kl = 0.0;
  const Vector mean = m0.colwise().mean().transpose();
  for (Eigen::Index u = 0; u < 60; ++u)
    start_kl += (m0.row(u).transpose().array() * (m0.row(u).transpose().array() / mean.array()).log()).sum();
  EXPECT_LT(fit.report.mean_row_kl, start_kl / 60.0);
}

TEST(FitGroundTruth, RejectsNonPositiveRows) {
  RngStream rng = rng_new(7);
  const EmbeddingTable table = build_embedding_table(rng, 2, 50);
  Matrix m0(2, 2);
  m0 << 1.0, 0.0, 0.5, 0.5;
  EXPECT_THROW(fit_ground_truth_model(TransitionMatrix(m0), table), InvalidArgument);
}

TEST(GenerateCorpus, ShapeSeenPairsAndDeterminism) {
  const World world = make_world(8, 50, 0.5);
  RngStream a = rng_new(9), b = rng_new(9);
  const Corpus corpus = generate_corpus(world, a, 500, 10);
  ASSERT_EQ(corpus.size(), 500u);
  PairSet expected;
  for (const auto& seq : corpus.sequences) {
    ASSERT_EQ(seq.size(), 10u);
    for (std::size_t t = 0; t < seq.size(); ++t) {
      ASSERT_LT(seq[t], 50u);
      if (t > 0) expected.emplace_back(seq[t - 1], seq[t]);
    }
  }
  std::sort(expected.begin(), expected.end());
  expected.erase(std::unique(expected.begin(), expected.end()), expected.end());
  EXPECT_EQ(corpus.seen_pairs, expected);
  EXPECT_EQ(generate_corpus(world, b, 500, 10).sequences, corpus.sequences);
  EXPECT_THROW(generate_corpus(world, a, 0, 10), InvalidArgument);
  EXPECT_THROW(generate_corpus(world, a, 5, 1), InvalidArgument);
}

TEST(GenerateCorpus, UnperturbedFrequenciesMatchM0) {
  const World world = make_world(10, 10, 0.0);
  RngStream rng = rng_new(11);
  const Corpus corpus = generate_corpus(world, rng, 11112, 10);  // ~1e5 transitions
  Matrix counts = Matrix::Zero(10, 10);
  for (const auto& seq : corpus.sequences)
    for (std::size_t t = 1; t < seq.size(); ++t) counts(seq[t - 1], seq[t]) += 1.0;
  for (Eigen::Index u = 0; u < 10; ++u) {
    const double total = counts.row(u).sum();
    ASSERT_GT(total, 0.0);
    for (Eigen::Index v = 0; v < 10; ++v) {
      const double p = world.m0(u, v);
      const double se = std::sqrt(p * (1.0 - p) / total);
      EXPECT_LE(std::abs(counts(u, v) / total - p), 3.0 * se + 1e-12) << "pair " << u << "," << v;
    }
  }
}

TEST(OracleTransition, ZeroAlphaIsTheFittedBigram) {
  const World world = make_world(12, 10, 0.0);
  RngStream rng = rng_new(13);
  const TransitionMatrix oracle = oracle_transition(world, 5, rng);
  for (Eigen::Index u = 0; u < 10; ++u) {
    const ProbVector p = bigram_probs(world.theta0, world.table.embed(static_cast<TokenId>(u)));
    EXPECT_LT((oracle.values().row(u).transpose() - p.values()).cwiseAbs().maxCoeff(), 1e-15);
  }
  EXPECT_LE(max_row_tv(oracle.values(), world.m0.values()), 1e-6);
}

TEST(OracleTransition, RowsAreDistributionsAndDeterministic) {
  const World world = make_world(14, 10, 1.0);
  for (std::size_t n_mc : {1u, 7u, 5000u}) {
    RngStream a = rng_new(15), b = rng_new(15);
    const TransitionMatrix m = oracle_transition(world, n_mc, a);
    EXPECT_LT((m.values().rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
    EXPECT_EQ(m.values(), oracle_transition(world, n_mc, b).values());
  }
  RngStream rng = rng_new(15);
  EXPECT_THROW(oracle_transition(world, 0, rng), InvalidArgument);
}

// Per-entry standard deviation of P(v | X_u + alpha T(w | X_u)) over w.
Matrix per_draw_sd(const World& world, std::size_t draws, RngStream& rng) {
  const Eigen::Index vocab = world.m0.size();
  Matrix sum = Matrix::Zero(vocab, vocab), sum_sq = Matrix::Zero(vocab, vocab);
  for (Eigen::Index u = 0; u < vocab; ++u) {
    const Vector x = world.table.embed(static_cast<TokenId>(u));
    for (std::size_t j = 0; j < draws; ++j) {
      const Vector w = gaussian_vector(rng, world.dims.latent);
      const Vector p = bigram_probs(world.theta0, x + ground_truth_perturbation(world.beta0, x, w, world.alpha)).values();
      sum.row(u) += p.transpose();
      sum_sq.row(u) += p.cwiseAbs2().transpose();
    }
  }
  const double n = static_cast<double>(draws);
  return (sum_sq / n - (sum / n).cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();
}

TEST(OracleTransition, MonteCarloAgreesAcrossBudgets) {
  const World world = make_world(16, 10, 1.0);
  RngStream sd_rng = rng_new(17);
  const Matrix sd = per_draw_sd(world, 4000, sd_rng);
  RngStream a = rng_new(18), b = rng_new(19);
  const Matrix small = oracle_transition(world, 10'000, a).values();
  const Matrix large = oracle_transition(world, 100'000, b).values();
  const Matrix se = sd * std::sqrt(1.0 / 1e4 + 1.0 / 1e5);
  for (Eigen::Index u = 0; u < 10; ++u)
    for (Eigen::Index v = 0; v < 10; ++v)
      EXPECT_LE(std::abs(small(u, v) - large(u, v)), 4.0 * se(u, v) + 1e-12) << "pair " << u << "," << v;
}

TEST(OracleTransition, ErrorScalesAsInverseSqrtBudget) {
  const World world = make_world(20, 10, 1.0);
  RngStream ref_rng = rng_new(21);
  const Matrix reference = oracle_transition(world, 200'000, ref_rng).values();
  std::vector<double> rms;
  for (std::size_t n_mc : {100u, 1000u, 10000u}) {
    double total = 0.0;
    for (int rep = 0; rep < 6; ++rep) {
      RngStream rng = rng_new(22).split("n" + std::to_string(n_mc)).split("rep" + std::to_string(rep));
      total += (oracle_transition(world, n_mc, rng).values() - reference).squaredNorm();
    }
    rms.push_back(std::sqrt(total / 6.0));
  }
  // A tenfold budget should shrink the error by about sqrt(10).
  for (std::size_t i = 1; i < rms.size(); ++i) {
    const double ratio = rms[i - 1] / rms[i];
    EXPECT_GT(ratio, 2.0) << "budget step " << i;
    EXPECT_LT(ratio, 5.0) << "budget step " << i;
  }
}

TEST(Pairs, UnseenPairsExamples) {
  const Corpus single = make_corpus({{0, 1}}, 2, 2);
  EXPECT_EQ(unseen_pairs(single, 2), (PairSet{{0, 0}, {1, 0}, {1, 1}}));

  const Corpus full = make_corpus({{0, 0, 1, 1, 0}}, 2, 5);
  EXPECT_TRUE(unseen_pairs(full, 2).empty());

  const World world = make_world(23, 10, 0.5);
  RngStream rng = rng_new(24);
  const Corpus corpus = generate_corpus(world, rng, 20, 10);
  EXPECT_EQ(unseen_pairs(corpus, 10).size() + corpus.seen_pairs.size(), 100u);
  EXPECT_EQ(all_pairs(3).size(), 9u);
}

TEST(Pairs, MakeCorpusRejectsInvalidSequences) {
  EXPECT_THROW(make_corpus({{}}, 3, 4), InvalidArgument);
  EXPECT_THROW(make_corpus({{0, 3}}, 3, 4), InvalidArgument);
  EXPECT_THROW(make_corpus({{0, 1, 2, 0, 1}}, 3, 4), InvalidArgument);
  EXPECT_NO_THROW(make_corpus({{2}}, 3, 4));
}

TEST(CorpusIo, RoundTripAndHeader) {
  const World world = make_world(25, 10, 0.5);
  RngStream rng = rng_new(26);
  const Corpus corpus = generate_corpus(world, rng, 30, 10);
  std::stringstream buffer;
  write_corpus(buffer, corpus, 77);
  std::string header;
  std::getline(std::istringstream(buffer.str()), header);
  EXPECT_EQ(header, "# vocab=10 len=10 seed=77");
  const CorpusFile back = read_corpus(buffer);
  EXPECT_EQ(back.seed, 77u);
  EXPECT_EQ(back.corpus.sequences, corpus.sequences);
  EXPECT_EQ(back.corpus.seen_pairs, corpus.seen_pairs);
  EXPECT_EQ(back.corpus.vocab, 10);
}

TEST(CorpusIo, RejectsMalformedInput) {
  std::istringstream no_header("0 1 2\n");
  EXPECT_THROW(read_corpus(no_header), InvalidArgument);
  std::istringstream bad_token("# vocab=3 len=4 seed=1\n0 x 2\n");
  EXPECT_THROW(read_corpus(bad_token), InvalidArgument);
  std::istringstream out_of_vocab("# vocab=3 len=4 seed=1\n0 5 2\n");
  EXPECT_THROW(read_corpus(out_of_vocab), InvalidArgument);
  std::istringstream empty("");
  EXPECT_THROW(read_corpus(empty), InvalidArgument);
}

}  // namespace
}  // namespace cpat
