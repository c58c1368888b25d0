#pragma once

#include "cpat/models.hpp"

#include <optional>
#include <span>
#include <vector>

namespace cpat {

/// One log-probability term: log P(target | perturbed prefix) minus, when a
/// contrast token is present, log P(contrast | same perturbed prefix).
struct TermRef {
  std::uint32_t sequence = 0;
  std::uint32_t position = 0;  // index of the predicted token; the prefix is [0, position)
  TokenId target = 0;
  std::optional<TokenId> contrast;
};

struct TermBatch {
  std::vector<TermRef> terms;
  Block latents;  // r x terms.size(); unused when the engine is unperturbed
  Block masks;    // d x terms.size() dropout multipliers, or empty for evaluation mode
};

/// Batched forward/backward evaluation of score terms over a fixed set of
/// sequences. The recurrent encoder is run once per sequence at construction
/// and its pooled contexts are shared by every term on that sequence.
///
/// An unperturbed engine conditions P_theta on the raw previous embedding and
/// leaves the beta gradient at zero.
class ScoreEngine {
 public:
  ScoreEngine(const ModelParams& params, const EmbeddingTable& table,
              std::span<const TokenSequence> sequences, bool perturbed = true);

  const ModelParams& params() const { return params_; }
  bool perturbed() const { return perturbed_; }

  /// Evaluation-mode next-token distributions (|V| x n), one column per term;
  /// only the sequence and position of each term are used.
  Block next_token_probs(std::span<const TermRef> at, const Block& latents) const;

  /// Sum of all term values; accumulates the flat gradient into *grad when
  /// grad is non-null (it is resized and zeroed first).
  double evaluate(const TermBatch& batch, Vector* grad) const;

 private:
  struct Forward;

  void run_encoder();
  Forward forward(std::span<const TermRef> terms, const Block& latents, const Block* masks) const;
  Eigen::Index context_index(const TermRef& term) const;

  const ModelParams& params_;
  const EmbeddingTable& table_;
  std::span<const TokenSequence> sequences_;
  bool perturbed_;

  // Encoder caches, one entry per time step; columns are sequences.
  std::vector<Block> inputs_;
  std::vector<Block> gates_;  // post-activation [i; f; g; o]
  std::vector<Block> cells_;
  std::vector<Block> hiddens_;
  Block contexts_;  // h x total contexts
  std::vector<Eigen::Index> context_offset_;
};

}  // namespace cpat
