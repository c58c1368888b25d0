#include "cpat/inference.hpp"

#include "cpat/score_engine.hpp"

#include <algorithm>
#include <string>

namespace cpat {

std::string_view to_string(PerturbMode mode) {
  return mode == PerturbMode::kPerturbed ? "perturbed" : "unperturbed";
}

PerturbMode parse_perturb_mode(std::string_view text) {
  if (text == "perturbed") return PerturbMode::kPerturbed;
  if (text == "unperturbed") return PerturbMode::kUnperturbed;
  throw InvalidArgument("unknown perturbation mode '" + std::string(text) + "'");
}

std::vector<TokenSequence> generate_batch(const ModelParams& params, const EmbeddingTable& table,
                                          std::vector<TokenSequence> prompts, std::size_t max_len, RngStream& rng,
                                          PerturbMode mode, std::optional<TokenId> eos) {
  const auto vocab = static_cast<TokenId>(table.vocab_size());
  for (const auto& prompt : prompts) {
    if (prompt.empty()) throw InvalidArgument("generate: empty prompt");
    if (max_len < prompt.size()) throw InvalidArgument("generate: max_len shorter than the prompt");
    for (TokenId tok : prompt)
      if (tok >= vocab) throw InvalidArgument("generate: prompt token out of vocabulary");
  }
  const bool perturbed = mode == PerturbMode::kPerturbed;
  const Eigen::Index latent_dim = params.beta.w1.cols() - params.beta.encoder.wh.cols();
  std::vector<bool> finished(prompts.size(), false);

  for (;;) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < prompts.size(); ++i)
      if (!finished[i] && prompts[i].size() < max_len) active.push_back(i);
    if (active.empty()) break;

    std::vector<TokenSequence> prefixes;
    prefixes.reserve(active.size());
    for (std::size_t i : active) prefixes.push_back(prompts[i]);
    const ScoreEngine engine(params, table, prefixes, perturbed);

    std::vector<TermRef> at(active.size());
    Block latents;
    if (perturbed) latents.resize(latent_dim, static_cast<Eigen::Index>(active.size()));
    for (std::size_t j = 0; j < active.size(); ++j) {
      at[j] = TermRef{static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(prefixes[j].size()), 0, std::nullopt};
      if (perturbed)
        for (Eigen::Index k = 0; k < latent_dim; ++k) latents(k, static_cast<Eigen::Index>(j)) = rng.normal();
    }
    const Block probs = engine.next_token_probs(at, latents);
    for (std::size_t j = 0; j < active.size(); ++j) {
      const auto next = static_cast<TokenId>(
          categorical_sample(rng, probs.col(static_cast<Eigen::Index>(j)).data(), probs.rows()));
      prompts[active[j]].push_back(next);
      if (eos && next == *eos) finished[active[j]] = true;
    }
  }
  return prompts;
}

TokenSequence generate(const ModelParams& params, const EmbeddingTable& table, const TokenSequence& prompt,
                       std::size_t max_len, RngStream& rng, PerturbMode mode, std::optional<TokenId> eos) {
  return generate_batch(params, table, {prompt}, max_len, rng, mode, eos).front();
}

TransitionMatrix model_transition_matrix(const ModelParams& params, const EmbeddingTable& table, std::size_t n_mc,
                                         RngStream& rng, PerturbMode mode) {
  if (n_mc < 1) throw InvalidArgument("model_transition_matrix: n_mc must be positive");
  const Eigen::Index vocab = table.vocab_size();
  if (mode == PerturbMode::kUnperturbed) {
    const Block inputs = table.table().transpose();
    return TransitionMatrix(bigram_probs_batch(params.theta, inputs).transpose());
  }

  std::vector<TokenSequence> singletons(static_cast<std::size_t>(vocab));
  for (Eigen::Index u = 0; u < vocab; ++u) singletons[static_cast<std::size_t>(u)] = {static_cast<TokenId>(u)};
  const ScoreEngine engine(params, table, singletons, true);
  const Eigen::Index latent_dim = params.beta.w1.cols() - params.beta.encoder.wh.cols();

  constexpr std::size_t kChunk = 4096;
  Matrix out(vocab, vocab);
  for (Eigen::Index u = 0; u < vocab; ++u) {
    Vector acc = Vector::Zero(vocab);
    for (std::size_t done = 0; done < n_mc; done += kChunk) {
      const std::size_t cols = std::min(kChunk, n_mc - done);
      std::vector<TermRef> at(cols, TermRef{static_cast<std::uint32_t>(u), 1, 0, std::nullopt});
      Block latents(latent_dim, static_cast<Eigen::Index>(cols));
      for (Eigen::Index j = 0; j < latents.cols(); ++j)
        for (Eigen::Index k = 0; k < latent_dim; ++k) latents(k, j) = rng.normal();
      acc += engine.next_token_probs(at, latents).rowwise().sum();
    }
    out.row(u) = acc.transpose() / static_cast<double>(n_mc);
  }
  return TransitionMatrix(std::move(out));
}

}  // namespace cpat
