#include "cpat/models.hpp"

#include "cpat/score_engine.hpp"

#include <cmath>

namespace cpat {
namespace {

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, RngStream& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = (2.0 * rng.uniform() - 1.0) * bound;
  return m;
}

Vector uniform_vector(Eigen::Index n, double bound, RngStream& rng) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = (2.0 * rng.uniform() - 1.0) * bound;
  return v;
}

double fan_in_bound(Eigen::Index fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void lstm_step(const LstmParams& p, const Vector& x, Vector& h, Vector& c) {
  const Eigen::Index hd = p.wh.cols();
  Vector z = p.wx * x + p.wh * h + p.b;
  for (Eigen::Index k = 0; k < hd; ++k) {
    const double i = sigmoid(z[k]);
    const double f = sigmoid(z[hd + k]);
    const double g = std::tanh(z[2 * hd + k]);
    const double o = sigmoid(z[3 * hd + k]);
    c[k] = f * c[k] + i * g;
    h[k] = o * std::tanh(c[k]);
  }
}

}  // namespace

void ModelDims::validate() const {
  if (vocab < 2) throw InvalidArgument("ModelDims: vocabulary needs at least two tokens");
  if (dim < 1 || latent < 1 || hidden < 1 || gen_hidden < 1)
    throw InvalidArgument("ModelDims: dimensions must be positive");
}

EmbeddingTable::EmbeddingTable(Matrix table) : table_(std::move(table)) {
  if (table_.rows() < 2 || table_.cols() < 1) throw InvalidArgument("EmbeddingTable: bad shape");
}

Vector EmbeddingTable::embed(TokenId token) const {
  if (token >= static_cast<TokenId>(vocab_size())) throw InvalidArgument("embed: token out of vocabulary");
  return table_.row(token).transpose();
}

Matrix EmbeddingTable::embed_sequence(std::span<const TokenId> tokens) const {
  Matrix out(dim(), static_cast<Eigen::Index>(tokens.size()));
  for (std::size_t i = 0; i < tokens.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = embed(tokens[i]);
  return out;
}

EmbeddingTable build_embedding_table(RngStream& rng, Eigen::Index vocab_size, Eigen::Index dim) {
  if (vocab_size < 2) throw InvalidArgument("build_embedding_table: vocab_size must be >= 2");
  if (dim < 1) throw InvalidArgument("build_embedding_table: dim must be >= 1");
  constexpr int kMaxDraws = 11;  // first draw plus ten redraws
  for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
    Matrix table(vocab_size, dim);
    for (Eigen::Index i = 0; i < vocab_size; ++i)
      for (Eigen::Index j = 0; j < dim; ++j) table(i, j) = rng.normal();
    if (vocab_size > dim) return EmbeddingTable(std::move(table));
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(table);
    if (svd.singularValues().minCoeff() > 1e-8) return EmbeddingTable(std::move(table));
  }
  throw NumericalError("build_embedding_table: could not draw a full-row-rank table");
}

ModelDims ModelParams::dims() const {
  ModelDims d;
  d.vocab = theta.w2.rows();
  d.dim = theta.w1.rows();
  d.hidden = beta.encoder.wh.cols();
  d.latent = beta.w1.cols() - d.hidden;
  d.gen_hidden = beta.w1.rows();
  return d;
}

BigramParams init_bigram_params(const ModelDims& dims, double dropout_rate, RngStream& rng) {
  dims.validate();
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw InvalidArgument("dropout rate must lie in [0, 1)");
  const double bound = fan_in_bound(dims.dim);
  BigramParams p;
  p.w1 = uniform_matrix(dims.dim, dims.dim, bound, rng);
  p.b1 = uniform_vector(dims.dim, bound, rng);
  p.w2 = uniform_matrix(dims.vocab, dims.dim, bound, rng);
  p.b2 = uniform_vector(dims.vocab, bound, rng);
  p.dropout_rate = dropout_rate;
  return p;
}

PerturbParams init_perturb_params(const ModelDims& dims, RngStream& rng) {
  dims.validate();
  const Eigen::Index h = dims.hidden;
  PerturbParams p;
  p.encoder.wx = uniform_matrix(4 * h, dims.dim, fan_in_bound(dims.dim), rng);
  p.encoder.wh = uniform_matrix(4 * h, h, fan_in_bound(h), rng);
  p.encoder.b = Vector::Zero(4 * h);
  p.encoder.b.segment(h, h).setOnes();  // forget gate
  const double gen_bound = fan_in_bound(dims.latent + h);
  p.w1 = uniform_matrix(dims.gen_hidden, dims.latent + h, gen_bound, rng);
  p.b1 = uniform_vector(dims.gen_hidden, gen_bound, rng);
  const double out_bound = fan_in_bound(dims.gen_hidden);
  p.w2 = uniform_matrix(dims.dim, dims.gen_hidden, out_bound, rng);
  p.b2 = uniform_vector(dims.dim, out_bound, rng);
  return p;
}

ModelParams init_model_params(const ModelDims& dims, double dropout_rate, RngStream& rng) {
  RngStream theta_rng = rng.split("theta");
  RngStream beta_rng = rng.split("beta");
  return ModelParams{init_bigram_params(dims, dropout_rate, theta_rng), init_perturb_params(dims, beta_rng)};
}

GroundTruthPerturbParams init_ground_truth_perturb(const ModelDims& dims, RngStream& rng) {
  dims.validate();
  const Eigen::Index h = dims.hidden;
  GroundTruthPerturbParams p;
  const double b1 = fan_in_bound(dims.latent + dims.dim);
  p.w1 = uniform_matrix(h, dims.latent + dims.dim, b1, rng);
  p.b1 = uniform_vector(h, b1, rng);
  const double b2 = fan_in_bound(h);
  p.w2 = uniform_matrix(h, h, b2, rng);
  p.b2 = uniform_vector(h, b2, rng);
  p.w3 = uniform_matrix(dims.dim, h, b2, rng);
  p.b3 = uniform_vector(dims.dim, b2, rng);
  return p;
}

void zero_generator(PerturbParams& beta) {
  beta.w1.setZero();
  beta.b1.setZero();
  beta.w2.setZero();
  beta.b2.setZero();
}

// ---------------------------------------------------------------------------

ParamLayout::ParamLayout(const ModelDims& dims) : dims_(dims) {
  dims.validate();
  const auto h = static_cast<std::size_t>(dims.hidden);
  const auto d = static_cast<std::size_t>(dims.dim);
  const auto v = static_cast<std::size_t>(dims.vocab);
  const auto r = static_cast<std::size_t>(dims.latent);
  const auto g = static_cast<std::size_t>(dims.gen_hidden);
  auto add = [this](std::string name, std::size_t rows, std::size_t cols, ParamGroup group) {
    segments_.push_back(ParamSegment{std::move(name), size_, rows, cols, group});
    size_ += rows * cols;
  };
  add("theta.w1", d, d, ParamGroup::kTheta);
  add("theta.b1", d, 1, ParamGroup::kTheta);
  add("theta.w2", v, d, ParamGroup::kTheta);
  add("theta.b2", v, 1, ParamGroup::kTheta);
  theta_size_ = size_;
  add("beta.enc.wx", 4 * h, d, ParamGroup::kBeta);
  add("beta.enc.wh", 4 * h, h, ParamGroup::kBeta);
  add("beta.enc.b", 4 * h, 1, ParamGroup::kBeta);
  add("beta.gen.w1", g, r + h, ParamGroup::kBeta);
  add("beta.gen.b1", g, 1, ParamGroup::kBeta);
  add("beta.gen.w2", d, g, ParamGroup::kBeta);
  add("beta.gen.b2", d, 1, ParamGroup::kBeta);
}

const ParamSegment& ParamLayout::segment(std::string_view name) const {
  for (const auto& s : segments_)
    if (s.name == name) return s;
  throw InvalidArgument("ParamLayout: no segment named " + std::string(name));
}

namespace {

template <typename Params, typename Fn>
void for_each_block(Params& p, Fn&& fn) {
  fn(p.theta.w1.data());
  fn(p.theta.b1.data());
  fn(p.theta.w2.data());
  fn(p.theta.b2.data());
  fn(p.beta.encoder.wx.data());
  fn(p.beta.encoder.wh.data());
  fn(p.beta.encoder.b.data());
  fn(p.beta.w1.data());
  fn(p.beta.b1.data());
  fn(p.beta.w2.data());
  fn(p.beta.b2.data());
}

ModelParams zero_params(const ModelDims& dims) {
  const Eigen::Index h = dims.hidden;
  ModelParams p;
  p.theta.w1 = Matrix::Zero(dims.dim, dims.dim);
  p.theta.b1 = Vector::Zero(dims.dim);
  p.theta.w2 = Matrix::Zero(dims.vocab, dims.dim);
  p.theta.b2 = Vector::Zero(dims.vocab);
  p.beta.encoder.wx = Matrix::Zero(4 * h, dims.dim);
  p.beta.encoder.wh = Matrix::Zero(4 * h, h);
  p.beta.encoder.b = Vector::Zero(4 * h);
  p.beta.w1 = Matrix::Zero(dims.gen_hidden, dims.latent + h);
  p.beta.b1 = Vector::Zero(dims.gen_hidden);
  p.beta.w2 = Matrix::Zero(dims.dim, dims.gen_hidden);
  p.beta.b2 = Vector::Zero(dims.dim);
  return p;
}

}  // namespace

Vector pack(const ModelParams& params) {
  const ParamLayout layout(params.dims());
  Vector flat(static_cast<Eigen::Index>(layout.size()));
  std::size_t i = 0;
  for_each_block(params, [&](const double* data) {
    const auto& seg = layout.segments()[i++];
    std::copy(data, data + seg.size(), flat.data() + seg.offset);
  });
  return flat;
}

ModelParams unpack(const ParamLayout& layout, const Vector& flat, double dropout_rate) {
  if (static_cast<std::size_t>(flat.size()) != layout.size())
    throw InvalidArgument("unpack: flat vector has " + std::to_string(flat.size()) + " entries, layout expects " +
                          std::to_string(layout.size()));
  ModelParams p = zero_params(layout.dims());
  p.theta.dropout_rate = dropout_rate;
  std::size_t i = 0;
  for_each_block(p, [&](double* data) {
    const auto& seg = layout.segments()[i++];
    std::copy(flat.data() + seg.offset, flat.data() + seg.offset + seg.size(), data);
  });
  return p;
}

// ---------------------------------------------------------------------------

Vector sample_dropout_mask(RngStream& rng, Eigen::Index dim, double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument("dropout rate must lie in [0, 1)");
  Vector mask = Vector::Ones(dim);
  if (rate == 0.0) return mask;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < dim; ++i) mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
  return mask;
}

ProbVector bigram_probs(const BigramParams& theta, const Vector& x_prev, const DropoutMask& mask) {
  if (x_prev.size() != theta.w1.cols()) throw InvalidArgument("bigram_probs: embedding width mismatch");
  Vector hidden = (theta.w1 * x_prev + theta.b1).cwiseMax(0.0);
  if (mask) {
    if (mask->size() != hidden.size()) throw InvalidArgument("bigram_probs: dropout mask width mismatch");
    hidden = hidden.cwiseProduct(*mask);
  }
  return softmax(theta.w2 * hidden + theta.b2);
}

Block bigram_probs_batch(const BigramParams& theta, const Block& inputs) {
  if (inputs.rows() != theta.w1.cols()) throw InvalidArgument("bigram_probs_batch: embedding width mismatch");
  Block hidden = theta.w1 * inputs;
  hidden.colwise() += theta.b1;
  hidden = hidden.cwiseMax(0.0);
  Block logits = theta.w2 * hidden;
  logits.colwise() += theta.b2;
  if (!logits.allFinite()) throw NumericalError("bigram_probs_batch: non-finite logits");
  log_softmax_columns(logits);
  return logits.array().exp().matrix();
}

Vector encode_context(const LstmParams& encoder, const Matrix& prefix) {
  if (prefix.cols() == 0) throw InvalidArgument("encode_context: empty prefix");
  if (prefix.rows() != encoder.wx.cols()) throw InvalidArgument("encode_context: embedding width mismatch");
  const Eigen::Index hd = encoder.wh.cols();
  Vector h = Vector::Zero(hd);
  Vector c = Vector::Zero(hd);
  Vector pooled = Vector::Zero(hd);
  for (Eigen::Index s = 0; s < prefix.cols(); ++s) {
    lstm_step(encoder, prefix.col(s), h, c);
    pooled += h;
  }
  return pooled / static_cast<double>(prefix.cols());
}

Vector generator_output(const PerturbParams& beta, const Vector& latent, const Vector& context) {
  if (latent.size() + context.size() != beta.w1.cols()) throw InvalidArgument("generator_output: input width mismatch");
  Vector z(beta.w1.cols());
  z << latent, context;
  return beta.w2 * (beta.w1 * z + beta.b1).cwiseMax(0.0) + beta.b2;
}

Matrix perturbation(const PerturbParams& beta, const Matrix& prefix, const Vector& latent) {
  if (prefix.cols() == 0) throw InvalidArgument("perturbation: empty prefix");
  const Vector u = generator_output(beta, latent, encode_context(beta.encoder, prefix));
  return u.replicate(1, prefix.cols());
}

Vector ground_truth_perturbation(const GroundTruthPerturbParams& beta0, const Vector& x_prev, const Vector& latent,
                                 double alpha) {
  if (!(alpha >= 0.0)) throw InvalidArgument("ground_truth_perturbation: alpha must be non-negative");
  if (latent.size() + x_prev.size() != beta0.w1.cols())
    throw InvalidArgument("ground_truth_perturbation: input width mismatch");
  Vector z(beta0.w1.cols());
  z << latent, x_prev;
  const Vector a1 = (beta0.w1 * z + beta0.b1).cwiseMax(0.0);
  const Vector a2 = (beta0.w2 * a1 + beta0.b2).cwiseMax(0.0);
  return alpha * (beta0.w3 * a2 + beta0.b3);
}

Block ground_truth_perturbation_batch(const GroundTruthPerturbParams& beta0, const Vector& x_prev,
                                      const Block& latents, double alpha) {
  if (!(alpha >= 0.0)) throw InvalidArgument("ground_truth_perturbation: alpha must be non-negative");
  const Eigen::Index r = latents.rows();
  if (r + x_prev.size() != beta0.w1.cols()) throw InvalidArgument("ground_truth_perturbation: input width mismatch");
  // The x_prev half of the first layer is shared by every column.
  const Vector shared = beta0.w1.rightCols(x_prev.size()) * x_prev + beta0.b1;
  Block a1 = beta0.w1.leftCols(r) * latents;
  a1.colwise() += shared;
  a1 = a1.cwiseMax(0.0);
  Block a2 = beta0.w2 * a1;
  a2.colwise() += beta0.b2;
  a2 = a2.cwiseMax(0.0);
  Block out = beta0.w3 * a2;
  out.colwise() += beta0.b3;
  return alpha * out;
}

ScoreResult score_log_prob(const ModelParams& params, const EmbeddingTable& table, std::span<const TokenId> prefix,
                           const Vector& latent, TokenId target, const DropoutMask& mask) {
  if (prefix.empty()) throw InvalidArgument("score_log_prob: empty prefix");
  if (target >= static_cast<TokenId>(table.vocab_size())) throw InvalidArgument("score_log_prob: target out of vocabulary");
  std::vector<TokenSequence> seqs(1, TokenSequence(prefix.begin(), prefix.end()));
  seqs[0].push_back(target);
  ScoreEngine engine(params, table, seqs);
  TermBatch batch;
  batch.terms.push_back(TermRef{0, static_cast<std::uint32_t>(prefix.size()), target, std::nullopt});
  batch.latents = latent;
  if (mask) batch.masks = *mask;
  ScoreResult result;
  result.log_prob = engine.evaluate(batch, &result.grad);
  return result;
}

}  // namespace cpat
