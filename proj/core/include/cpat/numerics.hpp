#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cpat {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Batched activations: one column per evaluated term.
using Block = Eigen::MatrixXd;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Seeded, splittable pseudo-random stream.
///
/// The stream identity is a 128-bit key derived from the root seed and the
/// chain of split labels; the generator itself is xoshiro256** seeded from
/// that key. Splitting depends only on the key and label, never on how many
/// values the parent has produced.
class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t seed);

  RngStream split(std::string_view label) const;

  const std::vector<std::string>& lineage() const { return lineage_; }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()();

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  double normal();
  double gamma(double shape);

  /// 64-bit digest of the stream identity; handy for deriving child seeds.
  std::uint64_t fingerprint() const;

 private:
  RngStream(std::array<std::uint64_t, 2> key, std::vector<std::string> lineage);
  void reseed();

  std::array<std::uint64_t, 2> key_{};
  std::array<std::uint64_t, 4> state_{};
  std::vector<std::string> lineage_;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

inline RngStream rng_new(std::uint64_t seed) { return RngStream(seed); }
inline RngStream rng_split(const RngStream& rng, std::string_view label) {
  return rng.split(label);
}

/// Non-negative vector summing to one (within 1e-12), checked on construction.
class ProbVector {
 public:
  static constexpr double kTolerance = 1e-12;

  explicit ProbVector(Vector values);

  const Vector& values() const { return values_; }
  Eigen::Index size() const { return values_.size(); }
  double operator[](Eigen::Index i) const { return values_[i]; }

 private:
  Vector values_;
};

Vector gaussian_vector(RngStream& rng, Eigen::Index n);

/// Symmetric Dirichlet draw via normalized Gamma(concentration, 1) variates.
ProbVector dirichlet_row(RngStream& rng, double concentration, Eigen::Index m);

Eigen::Index categorical_sample(RngStream& rng, const ProbVector& probs);
/// Unchecked variant for hot loops; `probs` must already be a distribution.
Eigen::Index categorical_sample(RngStream& rng, const double* probs, Eigen::Index m);

ProbVector softmax(const Vector& logits);
Vector log_softmax(const Vector& logits);

/// Column-wise stable log-softmax, in place.
void log_softmax_columns(Block& logits);

/// Objective with analytic gradient: returns f(x) and writes df/dx to *grad
/// when grad is non-null.
using GradFunction = std::function<double(const Vector& x, Vector* grad)>;

/// Largest per-coordinate error between the analytic gradient and central
/// differences, scaled by max(1, |numeric|).
double grad_check(const GradFunction& f, const Vector& x, double eps);

}  // namespace cpat
