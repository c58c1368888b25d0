#pragma once

#include "cpat/numerics.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cpat {

using TokenId = std::uint32_t;
using TokenSequence = std::vector<TokenId>;

struct ModelDims {
  Eigen::Index vocab = 50;
  Eigen::Index dim = 50;         // embedding width d (also the bigram hidden width)
  Eigen::Index latent = 8;       // r
  Eigen::Index hidden = 64;      // recurrent encoder width h
  Eigen::Index gen_hidden = 64;  // perturbation generator width

  void validate() const;
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Fixed token embeddings, one row per token.
class EmbeddingTable {
 public:
  explicit EmbeddingTable(Matrix table);

  const Matrix& table() const { return table_; }
  Eigen::Index vocab_size() const { return table_.rows(); }
  Eigen::Index dim() const { return table_.cols(); }
  Vector embed(TokenId token) const;

  /// Embeddings of `tokens` as the columns of a d x n matrix.
  Matrix embed_sequence(std::span<const TokenId> tokens) const;

 private:
  Matrix table_;
};

EmbeddingTable build_embedding_table(RngStream& rng, Eigen::Index vocab_size, Eigen::Index dim);

// P_theta: softmax(W2 * dropout(relu(W1 x + b1)) + b2).
struct BigramParams {
  Matrix w1;  // d x d
  Vector b1;
  Matrix w2;  // |V| x d
  Vector b2;
  double dropout_rate = 0.0;
};

// Single-layer LSTM, gate blocks stacked as [input; forget; cell; output].
struct LstmParams {
  Matrix wx;  // 4h x d
  Matrix wh;  // 4h x h
  Vector b;   // 4h
};

// T_beta: LSTM encoder, mean pooling, then a two-layer generator on [w; c].
struct PerturbParams {
  LstmParams encoder;
  Matrix w1;  // gen_hidden x (r + h)
  Vector b1;
  Matrix w2;  // d x gen_hidden
  Vector b2;
};

struct ModelParams {
  BigramParams theta;
  PerturbParams beta;

  ModelDims dims() const;
};

/// Frozen data-generating perturbation net: three ReLU layers on [w; x].
struct GroundTruthPerturbParams {
  Matrix w1;  // h x (r + d)
  Vector b1;
  Matrix w2;  // h x h
  Vector b2;
  Matrix w3;  // d x h
  Vector b3;
};

BigramParams init_bigram_params(const ModelDims& dims, double dropout_rate, RngStream& rng);
PerturbParams init_perturb_params(const ModelDims& dims, RngStream& rng);
ModelParams init_model_params(const ModelDims& dims, double dropout_rate, RngStream& rng);
GroundTruthPerturbParams init_ground_truth_perturb(const ModelDims& dims, RngStream& rng);

/// Zeroes the generator layers so that T_beta is identically zero.
void zero_generator(PerturbParams& beta);

// ---------------------------------------------------------------------------
// Flat parameter view

enum class ParamGroup : std::uint8_t { kTheta = 0, kBeta = 1 };

struct ParamSegment {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  ParamGroup group = ParamGroup::kTheta;

  std::size_t size() const { return rows * cols; }
  friend bool operator==(const ParamSegment&, const ParamSegment&) = default;
};

/// Canonical ordering of gamma = (theta, beta): theta.w1, theta.b1, theta.w2,
/// theta.b2, beta.enc.wx, beta.enc.wh, beta.enc.b, beta.gen.w1, beta.gen.b1,
/// beta.gen.w2, beta.gen.b2. Matrices are flattened row-major. All theta
/// segments precede all beta segments.
class ParamLayout {
 public:
  explicit ParamLayout(const ModelDims& dims);

  const ModelDims& dims() const { return dims_; }
  const std::vector<ParamSegment>& segments() const { return segments_; }
  std::size_t theta_size() const { return theta_size_; }
  std::size_t size() const { return size_; }
  const ParamSegment& segment(std::string_view name) const;

 private:
  ModelDims dims_;
  std::vector<ParamSegment> segments_;
  std::size_t theta_size_ = 0;
  std::size_t size_ = 0;
};

Vector pack(const ModelParams& params);
ModelParams unpack(const ParamLayout& layout, const Vector& flat, double dropout_rate);

// ---------------------------------------------------------------------------
// Forward evaluation

/// Multiplicative dropout mask on the bigram hidden layer: entries are 0 or
/// 1 / (1 - rate). An absent mask means evaluation mode.
using DropoutMask = std::optional<Vector>;

Vector sample_dropout_mask(RngStream& rng, Eigen::Index dim, double rate);

ProbVector bigram_probs(const BigramParams& theta, const Vector& x_prev, const DropoutMask& mask = std::nullopt);

/// Evaluation-mode P_theta for every column of `inputs` (d x n); returns |V| x n.
Block bigram_probs_batch(const BigramParams& theta, const Block& inputs);

/// Runs the encoder over the prefix columns and returns the mean-pooled state.
Vector encode_context(const LstmParams& encoder, const Matrix& prefix);

/// Generator output u for latent w and pooled context c.
Vector generator_output(const PerturbParams& beta, const Vector& latent, const Vector& context);

/// T_beta(w | prefix): the generator vector broadcast over every prefix column.
Matrix perturbation(const PerturbParams& beta, const Matrix& prefix, const Vector& latent);

Vector ground_truth_perturbation(const GroundTruthPerturbParams& beta0, const Vector& x_prev,
                                 const Vector& latent, double alpha);

/// Batched ground-truth perturbation for many latents (columns) at one x_prev.
Block ground_truth_perturbation_batch(const GroundTruthPerturbParams& beta0, const Vector& x_prev,
                                      const Block& latents, double alpha);

struct ScoreResult {
  double log_prob = 0.0;
  Vector grad;  // flat layout of ParamLayout(params.dims())
};

/// log P_theta(target | prefix + T_beta(w | prefix)) and its gradient with
/// respect to every entry of (theta, beta). w and the mask are held fixed.
ScoreResult score_log_prob(const ModelParams& params, const EmbeddingTable& table,
                           std::span<const TokenId> prefix, const Vector& latent, TokenId target,
                           const DropoutMask& mask = std::nullopt);

}  // namespace cpat
