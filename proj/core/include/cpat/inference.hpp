#pragma once

#include "cpat/datagen.hpp"
#include "cpat/models.hpp"

#include <optional>
#include <string_view>
#include <vector>

namespace cpat {

/// Unperturbed inference conditions P_theta on the raw prefix (T_beta skipped).
enum class PerturbMode { kPerturbed, kUnperturbed };

std::string_view to_string(PerturbMode mode);
PerturbMode parse_perturb_mode(std::string_view text);

/// Ancestral sampling: repeatedly draws w, perturbs the prefix and samples the
/// next token from evaluation-mode P_theta, until max_len tokens or `eos`.
TokenSequence generate(const ModelParams& params, const EmbeddingTable& table, const TokenSequence& prompt,
                       std::size_t max_len, RngStream& rng, PerturbMode mode,
                       std::optional<TokenId> eos = std::nullopt);

/// Lock-step generation for many prompts. Random draws are consumed in
/// prompt order at each step.
std::vector<TokenSequence> generate_batch(const ModelParams& params, const EmbeddingTable& table,
                                          std::vector<TokenSequence> prompts, std::size_t max_len, RngStream& rng,
                                          PerturbMode mode, std::optional<TokenId> eos = std::nullopt);

/// Effective token-to-token matrix of the model: row u averages P_theta at
/// X_u + T_beta(w | X_u) over n_mc latent draws (a single evaluation when
/// unperturbed).
TransitionMatrix model_transition_matrix(const ModelParams& params, const EmbeddingTable& table, std::size_t n_mc,
                                         RngStream& rng, PerturbMode mode);

}  // namespace cpat
