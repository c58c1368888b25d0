#include "cpat/numerics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

namespace cpat {
namespace {

std::vector<std::uint64_t> draws(RngStream rng, int n) {
  std::vector<std::uint64_t> out(n);
  for (auto& x : out) x = rng();
  return out;
}

TEST(RngStream, SameSeedSameStream) { EXPECT_EQ(draws(rng_new(7), 100), draws(rng_new(7), 100)); }

TEST(RngStream, DifferentSeedsDiffer) { EXPECT_NE(draws(rng_new(7), 100), draws(rng_new(8), 100)); }

TEST(RngStream, ZeroSeedIsValid) {
  auto values = draws(rng_new(0), 100);
  EXPECT_NE(values.front(), values.back());
  std::sort(values.begin(), values.end());
  EXPECT_EQ(std::unique(values.begin(), values.end()), values.end());
}

TEST(RngStream, SplitIsDeterministicAndLabelled) {
  const RngStream root = rng_new(42);
  EXPECT_EQ(draws(rng_split(root, "data"), 100), draws(rng_split(root, "data"), 100));
  EXPECT_NE(draws(rng_split(root, "data"), 100), draws(rng_split(root, "train"), 100));
  EXPECT_EQ(rng_split(rng_split(root, "a"), "b").lineage(), (std::vector<std::string>{"a", "b"}));
  EXPECT_THROW(rng_split(root, ""), InvalidArgument);
}

TEST(RngStream, SplitDoesNotDependOnParentPosition) {
  RngStream parent = rng_new(3);
  const auto before = draws(parent.split("x"), 10);
  for (int i = 0; i < 17; ++i) parent();
  EXPECT_EQ(before, draws(parent.split("x"), 10));
  // Splitting leaves the parent untouched.
  RngStream a = rng_new(3), b = rng_new(3);
  (void)a.split("child");
  EXPECT_EQ(a(), b());
}

TEST(RngStream, NestedSplitsDifferFromSiblings) {
  const RngStream root = rng_new(1);
  EXPECT_NE(draws(root.split("a").split("b"), 20), draws(root.split("b").split("a"), 20));
  EXPECT_NE(draws(root.split("ab"), 20), draws(root.split("a").split("b"), 20));
}

TEST(GaussianVector, LengthAndMoments) {
  RngStream rng = rng_new(11);
  EXPECT_EQ(gaussian_vector(rng, 8).size(), 8);
  EXPECT_THROW(gaussian_vector(rng, 0), InvalidArgument);

  constexpr int kDraws = 1'000'000;
  Vector sum = Vector::Zero(8), sum_sq = Vector::Zero(8);
  for (int i = 0; i < kDraws; ++i) {
    const Vector w = gaussian_vector(rng, 8);
    sum += w;
    sum_sq += w.cwiseAbs2();
  }
  for (int c = 0; c < 8; ++c) {
    const double mean = sum[c] / kDraws;
    const double var = sum_sq[c] / kDraws - mean * mean;
    EXPECT_LT(std::abs(mean), 4.0 / std::sqrt(kDraws)) << "coordinate " << c;
    EXPECT_LT(std::abs(var - 1.0), 0.01) << "coordinate " << c;
  }
}

TEST(DirichletRow, DrawsLieOnTheSimplex) {
  RngStream rng = rng_new(5);
  for (int i = 0; i < 200; ++i) {
    const ProbVector p = dirichlet_row(rng, 0.5, 50);
    EXPECT_NEAR(p.values().sum(), 1.0, 1e-12);
    EXPECT_GE(p.values().minCoeff(), 0.0);
  }
  EXPECT_THROW(dirichlet_row(rng, 0.0, 5), InvalidArgument);
  EXPECT_THROW(dirichlet_row(rng, -1.0, 5), InvalidArgument);
  EXPECT_THROW(dirichlet_row(rng, 1.0, 1), InvalidArgument);
}

TEST(DirichletRow, MeanIsUniform) {
  RngStream rng = rng_new(6);
  constexpr int kDraws = 100'000;
  constexpr int kDim = 50;
  Vector sum = Vector::Zero(kDim), sum_sq = Vector::Zero(kDim);
  for (int i = 0; i < kDraws; ++i) {
    const Vector p = dirichlet_row(rng, 0.5, kDim).values();
    sum += p;
    sum_sq += p.cwiseAbs2();
  }
  for (int c = 0; c < kDim; ++c) {
    const double mean = sum[c] / kDraws;
    const double se = std::sqrt((sum_sq[c] / kDraws - mean * mean) / kDraws);
    EXPECT_LT(std::abs(mean - 1.0 / kDim), 3.0 * se) << "coordinate " << c;
  }
}

TEST(DirichletRow, SmallConcentrationIsSparser) {
  RngStream rng = rng_new(8);
  double max_sparse = 0.0, max_dense = 0.0;
  for (int i = 0; i < 10'000; ++i) {
    max_sparse += dirichlet_row(rng, 0.5, 50).values().maxCoeff();
    max_dense += dirichlet_row(rng, 10.0, 50).values().maxCoeff();
  }
  EXPECT_GT(max_sparse, max_dense);
}

TEST(CategoricalSample, OneHotAlwaysReturnsItsIndex) {
  RngStream rng = rng_new(9);
  Vector p = Vector::Zero(5);
  p[3] = 1.0;
  const ProbVector probs(p);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(categorical_sample(rng, probs), 3);
}

TEST(CategoricalSample, FrequenciesMatchProbabilities) {
  RngStream rng = rng_new(10);
  constexpr int kDraws = 100'000;
  {
    const ProbVector uniform(Vector::Constant(4, 0.25));
    std::vector<int> counts(4, 0);
    for (int i = 0; i < kDraws; ++i) ++counts[categorical_sample(rng, uniform)];
    const double se = std::sqrt(0.25 * 0.75 / kDraws);
    for (int c : counts) EXPECT_LT(std::abs(c / double(kDraws) - 0.25), 3 * se);
  }
  {
    Vector p(2);
    p << 0.9, 0.1;
    const ProbVector probs(p);
    int zeros = 0;
    for (int i = 0; i < kDraws; ++i) zeros += categorical_sample(rng, probs) == 0;
    EXPECT_LT(std::abs(zeros / double(kDraws) - 0.9), 3 * std::sqrt(0.9 * 0.1 / kDraws));
  }
}

TEST(ProbVector, RejectsInvalidInput) {
  Vector bad(2);
  bad << 0.7, 0.4;
  EXPECT_THROW(ProbVector{bad}, InvalidArgument);
  bad << 1.2, -0.2;
  EXPECT_THROW(ProbVector{bad}, InvalidArgument);
  EXPECT_THROW(ProbVector{Vector()}, InvalidArgument);
}

TEST(Softmax, KnownValues) {
  const ProbVector half = softmax(Vector::Zero(2));
  EXPECT_EQ(half[0], 0.5);
  EXPECT_EQ(half[1], 0.5);
  for (double c : {-300.0, 0.0, 2.5, 700.0}) {
    const ProbVector p = softmax(Vector::Constant(4, c));
    for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(p[i], 0.25);
  }
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  Vector logits(2);
  logits << 1000.0, 0.0;
  const ProbVector p = softmax(logits);
  const long double tail = std::exp(-1000.0L) / (1.0L + std::exp(-1000.0L));
  EXPECT_EQ(p[0], 1.0);
  EXPECT_NEAR(p[1], static_cast<double>(tail), 1e-300);
  const Vector lp = log_softmax(logits);
  EXPECT_NEAR(lp[1], -1000.0, 1e-12);
}

TEST(Softmax, ShiftInvarianceProperty) {
  RngStream rng = rng_new(12);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector x = 5.0 * gaussian_vector(rng, 1 + trial % 30);
    const double shift = 100.0 * rng.normal();
    const ProbVector a = softmax(x);
    const ProbVector b = softmax((x.array() + shift).matrix());
    EXPECT_LT((a.values() - b.values()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Softmax, RejectsNonFinite) {
  Vector x(3);
  x << 0.0, std::numeric_limits<double>::quiet_NaN(), 1.0;
  EXPECT_THROW(softmax(x), NumericalError);
  x[1] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(softmax(x), NumericalError);
}

TEST(GradCheck, QuadraticAndConstant) {
  RngStream rng = rng_new(13);
  const Vector x = gaussian_vector(rng, 12);
  const GradFunction half_norm = [](const Vector& v, Vector* g) {
    if (g) *g = v;
    return 0.5 * v.squaredNorm();
  };
  EXPECT_LE(grad_check(half_norm, x, 1e-5), 1e-8);
  const GradFunction constant = [](const Vector& v, Vector* g) {
    if (g) *g = Vector::Zero(v.size());
    return 3.0;
  };
  EXPECT_LE(grad_check(constant, x, 1e-5), 1e-10);
}

TEST(GradCheck, DetectsWrongGradient) {
  const GradFunction wrong = [](const Vector& v, Vector* g) {
    if (g) *g = 2.0 * v;
    return 0.5 * v.squaredNorm();
  };
  EXPECT_GT(grad_check(wrong, Vector::Ones(3), 1e-5), 0.5);
}

TEST(GradCheck, RejectsBadInputs) {
  const GradFunction f = [](const Vector& v, Vector* g) {
    if (g) *g = v;
    return 0.5 * v.squaredNorm();
  };
  EXPECT_THROW(grad_check(f, Vector::Ones(2), 1e-2), InvalidArgument);
  EXPECT_THROW(grad_check(f, Vector::Ones(2), 1e-9), InvalidArgument);
  const GradFunction blows_up = [](const Vector& v, Vector* g) {
    if (g) *g = v;
    return std::numeric_limits<double>::infinity();
  };
  EXPECT_THROW(grad_check(blows_up, Vector::Ones(2), 1e-5), NumericalError);
}

}  // namespace
}  // namespace cpat
