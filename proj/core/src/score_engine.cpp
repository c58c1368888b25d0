#include "cpat/score_engine.hpp"

#include <cmath>
#include <string>

namespace cpat {
namespace {

Block sigmoid(const Block& z) { return (1.0 + (-z.array()).exp()).inverse().matrix(); }

Eigen::Map<Matrix> segment_map(Vector& flat, const ParamSegment& seg) {
  return Eigen::Map<Matrix>(flat.data() + seg.offset, static_cast<Eigen::Index>(seg.rows),
                            static_cast<Eigen::Index>(seg.cols));
}

}  // namespace

struct ScoreEngine::Forward {
  std::vector<Eigen::Index> context_index;
  Block z;       // [latent; context], (r + h) x G
  Block gen_pre;  // generator hidden pre-activation
  Block gen_hidden;
  Block input;   // perturbed previous embedding, d x G
  Block pre;     // bigram hidden pre-activation
  Block hidden;  // relu(pre) times the dropout multipliers
  Block log_probs;
};

ScoreEngine::ScoreEngine(const ModelParams& params, const EmbeddingTable& table,
                         std::span<const TokenSequence> sequences, bool perturbed)
    : params_(params), table_(table), sequences_(sequences), perturbed_(perturbed) {
  if (params.theta.w1.cols() != table.dim() || params.theta.w2.rows() != table.vocab_size())
    throw InvalidArgument("ScoreEngine: parameters do not match the embedding table");
  const auto vocab = static_cast<TokenId>(table.vocab_size());
  for (const auto& seq : sequences) {
    if (seq.empty()) throw InvalidArgument("ScoreEngine: empty sequence");
    for (TokenId tok : seq)
      if (tok >= vocab) throw InvalidArgument("ScoreEngine: token " + std::to_string(tok) + " out of vocabulary");
  }
  if (perturbed_) run_encoder();
}

void ScoreEngine::run_encoder() {
  const auto& enc = params_.beta.encoder;
  const Eigen::Index hd = enc.wh.cols();
  const Eigen::Index batch = static_cast<Eigen::Index>(sequences_.size());
  std::size_t steps = 0;
  for (const auto& seq : sequences_) steps = std::max(steps, seq.size());

  inputs_.assign(steps, Block());
  gates_.assign(steps, Block());
  cells_.assign(steps, Block());
  hiddens_.assign(steps, Block());

  Block h = Block::Zero(hd, batch);
  Block c = Block::Zero(hd, batch);
  for (std::size_t s = 0; s < steps; ++s) {
    Block& x = inputs_[s];
    x = Block::Zero(table_.dim(), batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
      const auto& seq = sequences_[static_cast<std::size_t>(b)];
      // Padded steps run on zero input; they come after every real step of
      // that sequence, so they never feed back into its states.
      if (s < seq.size()) x.col(b) = table_.table().row(seq[s]).transpose();
    }
    Block z = enc.wx * x + enc.wh * h;
    z.colwise() += enc.b;
    Block g(4 * hd, batch);
    g.topRows(2 * hd) = sigmoid(z.topRows(2 * hd));
    g.middleRows(2 * hd, hd) = z.middleRows(2 * hd, hd).array().tanh().matrix();
    g.bottomRows(hd) = sigmoid(z.bottomRows(hd));
    c = g.middleRows(hd, hd).cwiseProduct(c) + g.topRows(hd).cwiseProduct(g.middleRows(2 * hd, hd));
    h = g.bottomRows(hd).cwiseProduct(c.array().tanh().matrix());
    gates_[s] = std::move(g);
    cells_[s] = c;
    hiddens_[s] = h;
  }

  context_offset_.assign(sequences_.size() + 1, 0);
  for (std::size_t b = 0; b < sequences_.size(); ++b)
    context_offset_[b + 1] = context_offset_[b] + static_cast<Eigen::Index>(sequences_[b].size());
  contexts_.resize(hd, context_offset_.back());
  for (std::size_t b = 0; b < sequences_.size(); ++b) {
    Vector running = Vector::Zero(hd);
    for (std::size_t p = 1; p <= sequences_[b].size(); ++p) {
      running += hiddens_[p - 1].col(static_cast<Eigen::Index>(b));
      contexts_.col(context_offset_[b] + static_cast<Eigen::Index>(p) - 1) = running / static_cast<double>(p);
    }
  }
}

Eigen::Index ScoreEngine::context_index(const TermRef& term) const {
  if (term.sequence >= sequences_.size()) throw InvalidArgument("ScoreEngine: term refers to an unknown sequence");
  const auto& seq = sequences_[term.sequence];
  if (term.position < 1 || term.position > seq.size())
    throw InvalidArgument("ScoreEngine: term position must leave a non-empty prefix");
  return perturbed_ ? context_offset_[term.sequence] + term.position - 1 : 0;
}

ScoreEngine::Forward ScoreEngine::forward(std::span<const TermRef> terms, const Block& latents,
                                          const Block* masks) const {
  const auto& theta = params_.theta;
  const auto& beta = params_.beta;
  const Eigen::Index n = static_cast<Eigen::Index>(terms.size());
  const Eigen::Index d = table_.dim();

  Forward fw;
  fw.context_index.resize(terms.size());
  fw.input.resize(d, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const TermRef& term = terms[static_cast<std::size_t>(j)];
    fw.context_index[static_cast<std::size_t>(j)] = context_index(term);
    fw.input.col(j) = table_.table().row(sequences_[term.sequence][term.position - 1]).transpose();
  }

  if (perturbed_) {
    const Eigen::Index r = beta.w1.cols() - contexts_.rows();
    if (latents.rows() != r || latents.cols() != n)
      throw InvalidArgument("ScoreEngine: latent block must be r x number of terms");
    fw.z.resize(r + contexts_.rows(), n);
    fw.z.topRows(r) = latents;
    for (Eigen::Index j = 0; j < n; ++j)
      fw.z.col(j).tail(contexts_.rows()) = contexts_.col(fw.context_index[static_cast<std::size_t>(j)]);
    fw.gen_pre = beta.w1 * fw.z;
    fw.gen_pre.colwise() += beta.b1;
    fw.gen_hidden = fw.gen_pre.cwiseMax(0.0);
    fw.input.noalias() += beta.w2 * fw.gen_hidden;
    fw.input.colwise() += beta.b2;
  }

  fw.pre = theta.w1 * fw.input;
  fw.pre.colwise() += theta.b1;
  fw.hidden = fw.pre.cwiseMax(0.0);
  if (masks != nullptr && masks->size() > 0) {
    if (masks->rows() != d || masks->cols() != n)
      throw InvalidArgument("ScoreEngine: dropout masks must be d x number of terms");
    fw.hidden.array() *= masks->array();
  }
  fw.log_probs = theta.w2 * fw.hidden;
  fw.log_probs.colwise() += theta.b2;
  if (!fw.log_probs.allFinite()) throw NumericalError("ScoreEngine: non-finite logits");
  log_softmax_columns(fw.log_probs);
  return fw;
}

Block ScoreEngine::next_token_probs(std::span<const TermRef> at, const Block& latents) const {
  Forward fw = forward(at, latents, nullptr);
  return fw.log_probs.array().exp().matrix();
}

double ScoreEngine::evaluate(const TermBatch& batch, Vector* grad) const {
  const auto& theta = params_.theta;
  const auto& beta = params_.beta;
  const Eigen::Index n = static_cast<Eigen::Index>(batch.terms.size());
  const Eigen::Index vocab = table_.vocab_size();
  const bool masked = batch.masks.size() > 0;
  Forward fw = forward(batch.terms, batch.latents, masked ? &batch.masks : nullptr);

  double total = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const TermRef& term = batch.terms[static_cast<std::size_t>(j)];
    if (term.target >= vocab || (term.contrast && *term.contrast >= vocab))
      throw InvalidArgument("ScoreEngine: target out of vocabulary");
    total += fw.log_probs(term.target, j);
    if (term.contrast) total -= fw.log_probs(*term.contrast, j);
  }
  if (!std::isfinite(total)) throw NumericalError("ScoreEngine: non-finite objective");
  if (grad == nullptr) return total;

  const ParamLayout layout(params_.dims());
  grad->setZero(static_cast<Eigen::Index>(layout.size()));

  Block d_logits(vocab, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const TermRef& term = batch.terms[static_cast<std::size_t>(j)];
    auto col = d_logits.col(j);
    if (term.contrast) {
      // The normalizer cancels between the two log-probabilities.
      col.setZero();
      col[*term.contrast] -= 1.0;
    } else {
      col = -fw.log_probs.col(j).array().exp().matrix();
    }
    col[term.target] += 1.0;
  }

  segment_map(*grad, layout.segment("theta.w2")) = d_logits * fw.hidden.transpose();
  segment_map(*grad, layout.segment("theta.b2")) = d_logits.rowwise().sum();
  Block d_pre = theta.w2.transpose() * d_logits;
  if (masked) d_pre.array() *= batch.masks.array();
  d_pre.array() *= (fw.pre.array() > 0.0).cast<double>();
  segment_map(*grad, layout.segment("theta.w1")) = d_pre * fw.input.transpose();
  segment_map(*grad, layout.segment("theta.b1")) = d_pre.rowwise().sum();
  if (!perturbed_) {
    if (!grad->allFinite()) throw NumericalError("ScoreEngine: non-finite gradient");
    return total;
  }

  const Block d_input = theta.w1.transpose() * d_pre;
  segment_map(*grad, layout.segment("beta.gen.w2")) = d_input * fw.gen_hidden.transpose();
  segment_map(*grad, layout.segment("beta.gen.b2")) = d_input.rowwise().sum();
  Block d_gen = beta.w2.transpose() * d_input;
  d_gen.array() *= (fw.gen_pre.array() > 0.0).cast<double>();
  segment_map(*grad, layout.segment("beta.gen.w1")) = d_gen * fw.z.transpose();
  segment_map(*grad, layout.segment("beta.gen.b1")) = d_gen.rowwise().sum();

  const Eigen::Index hd = contexts_.rows();
  const Block d_z_context = beta.w1.rightCols(hd).transpose() * d_gen;
  Block d_contexts = Block::Zero(hd, contexts_.cols());
  for (Eigen::Index j = 0; j < n; ++j) d_contexts.col(fw.context_index[static_cast<std::size_t>(j)]) += d_z_context.col(j);

  // Mean pooling: context p averages hidden states 0..p-1.
  const std::size_t steps = hiddens_.size();
  const Eigen::Index nseq = static_cast<Eigen::Index>(sequences_.size());
  std::vector<Block> d_hidden(steps, Block::Zero(hd, nseq));
  for (std::size_t b = 0; b < sequences_.size(); ++b) {
    Vector acc = Vector::Zero(hd);
    for (std::size_t p = sequences_[b].size(); p >= 1; --p) {
      acc += d_contexts.col(context_offset_[b] + static_cast<Eigen::Index>(p) - 1) / static_cast<double>(p);
      d_hidden[p - 1].col(static_cast<Eigen::Index>(b)) = acc;
    }
  }

  const auto& enc = beta.encoder;
  auto d_wx = segment_map(*grad, layout.segment("beta.enc.wx"));
  auto d_wh = segment_map(*grad, layout.segment("beta.enc.wh"));
  auto d_b = segment_map(*grad, layout.segment("beta.enc.b"));
  Block dh_carry = Block::Zero(hd, nseq);
  Block dc_carry = Block::Zero(hd, nseq);
  Block dz(4 * hd, nseq);
  for (std::size_t s = steps; s-- > 0;) {
    const Block& g = gates_[s];
    const auto gi = g.topRows(hd).array();
    const auto gf = g.middleRows(hd, hd).array();
    const auto gg = g.middleRows(2 * hd, hd).array();
    const auto go = g.bottomRows(hd).array();
    const Eigen::ArrayXXd tc = cells_[s].array().tanh();
    const Eigen::ArrayXXd dh = (d_hidden[s] + dh_carry).array();
    const Eigen::ArrayXXd dc = dc_carry.array() + dh * go * (1.0 - tc.square());
    if (s > 0) {
      dz.middleRows(hd, hd) = (dc * cells_[s - 1].array() * gf * (1.0 - gf)).matrix();
    } else {
      dz.middleRows(hd, hd).setZero();
    }
    dz.topRows(hd) = (dc * gg * gi * (1.0 - gi)).matrix();
    dz.middleRows(2 * hd, hd) = (dc * gi * (1.0 - gg.square())).matrix();
    dz.bottomRows(hd) = (dh * tc * go * (1.0 - go)).matrix();
    dc_carry = (dc * gf).matrix();

    d_wx.noalias() += dz * inputs_[s].transpose();
    d_b.noalias() += dz.rowwise().sum();
    if (s > 0) d_wh.noalias() += dz * hiddens_[s - 1].transpose();
    dh_carry = enc.wh.transpose() * dz;
  }
  if (!grad->allFinite()) throw NumericalError("ScoreEngine: non-finite gradient");
  return total;
}

}  // namespace cpat
