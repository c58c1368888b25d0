#include "cpat/numerics.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace cpat {
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t splitmix64(std::uint64_t x) {
  x += kGolden;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

std::uint64_t hash_label(std::string_view label) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return splitmix64(h ^ label.size());
}

}  // namespace

RngStream::RngStream(std::uint64_t seed)
    : key_{splitmix64(seed), splitmix64(seed ^ 0x5851F42D4C957F2DULL)} {
  reseed();
}

RngStream::RngStream(std::array<std::uint64_t, 2> key, std::vector<std::string> lineage)
    : key_(key), lineage_(std::move(lineage)) {
  reseed();
}

void RngStream::reseed() {
  std::uint64_t x = key_[0];
  for (int i = 0; i < 4; ++i) {
    x = splitmix64(x ^ rotl(key_[1], 13 * i + 7));
    state_[i] = x;
  }
  if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = kGolden;
  has_spare_normal_ = false;
}

RngStream RngStream::split(std::string_view label) const {
  if (label.empty()) throw InvalidArgument("rng_split: empty label");
  const std::uint64_t h = hash_label(label);
  std::array<std::uint64_t, 2> child{splitmix64(key_[0] ^ h),
                                     splitmix64(key_[1] + rotl(h, 29) + key_[0])};
  auto lineage = lineage_;
  lineage.emplace_back(label);
  return RngStream(child, std::move(lineage));
}

std::uint64_t RngStream::fingerprint() const { return splitmix64(key_[0] ^ rotl(key_[1], 17)); }

RngStream::result_type RngStream::operator()() {
  // xoshiro256**
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double RngStream::uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

double RngStream::normal() {
  // Marsaglia polar method; the second variate is cached.
  if (has_spare_normal_) {
    has_spare_normal_ = false;
    return spare_normal_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double scale = std::sqrt(-2.0 * std::log(s) / s);
  spare_normal_ = v * scale;
  has_spare_normal_ = true;
  return u * scale;
}

double RngStream::gamma(double shape) {
  if (!(shape > 0.0)) throw InvalidArgument("gamma: shape must be positive");
  std::gamma_distribution<double> dist(shape, 1.0);
  return dist(*this);
}

ProbVector::ProbVector(Vector values) : values_(std::move(values)) {
  if (values_.size() == 0) throw InvalidArgument("ProbVector: empty");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < values_.size(); ++i) {
    const double p = values_[i];
    if (!std::isfinite(p) || p < 0.0) throw InvalidArgument("ProbVector: negative or non-finite entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kTolerance) {
    throw InvalidArgument("ProbVector: entries sum to " + std::to_string(sum));
  }
}

Vector gaussian_vector(RngStream& rng, Eigen::Index n) {
  if (n <= 0) throw InvalidArgument("gaussian_vector: n must be positive");
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = rng.normal();
  return out;
}

ProbVector dirichlet_row(RngStream& rng, double concentration, Eigen::Index m) {
  if (!(concentration > 0.0)) throw InvalidArgument("dirichlet_row: concentration must be positive");
  if (m < 2) throw InvalidArgument("dirichlet_row: need at least two categories");
  Vector g(m);
  double total = 0.0;
  do {
    for (Eigen::Index i = 0; i < m; ++i) g[i] = rng.gamma(concentration);
    total = g.sum();
  } while (!(total > 0.0));
  g /= total;
  // Absorb the rounding residue into the largest entry.
  Eigen::Index top = 0;
  g.maxCoeff(&top);
  g[top] += 1.0 - g.sum();
  return ProbVector(std::move(g));
}

Eigen::Index categorical_sample(RngStream& rng, const double* probs, Eigen::Index m) {
  const double u = rng.uniform();
  double acc = 0.0;
  Eigen::Index last_positive = 0;
  for (Eigen::Index j = 0; j < m; ++j) {
    if (probs[j] <= 0.0) continue;
    acc += probs[j];
    last_positive = j;
    if (u < acc) return j;
  }
  return last_positive;
}

Eigen::Index categorical_sample(RngStream& rng, const ProbVector& probs) {
  return categorical_sample(rng, probs.values().data(), probs.size());
}

Vector log_softmax(const Vector& logits) {
  if (logits.size() == 0) throw InvalidArgument("log_softmax: empty input");
  if (!logits.allFinite()) throw NumericalError("log_softmax: non-finite logits");
  const double top = logits.maxCoeff();
  const double lse = top + std::log((logits.array() - top).exp().sum());
  return (logits.array() - lse).matrix();
}

ProbVector softmax(const Vector& logits) {
  if (logits.size() == 0) throw InvalidArgument("softmax: empty input");
  if (!logits.allFinite()) throw NumericalError("softmax: non-finite logits");
  Vector e = (logits.array() - logits.maxCoeff()).exp().matrix();
  e /= e.sum();
  return ProbVector(std::move(e));
}

void log_softmax_columns(Block& logits) {
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    auto col = logits.col(c);
    const double top = col.maxCoeff();
    const double lse = top + std::log((col.array() - top).exp().sum());
    col.array() -= lse;
  }
}

double grad_check(const GradFunction& f, const Vector& x, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw InvalidArgument("grad_check: eps outside [1e-7, 1e-3]");
  Vector analytic(x.size());
  const double f0 = f(x, &analytic);
  if (!std::isfinite(f0) || !analytic.allFinite()) throw NumericalError("grad_check: non-finite objective");
  double worst = 0.0;
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = f(probe, nullptr);
    probe[i] = x[i] - eps;
    const double down = f(probe, nullptr);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) throw NumericalError("grad_check: non-finite objective");
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

}  // namespace cpat
