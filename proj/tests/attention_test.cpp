#include <gtest/gtest.h>

#include <random>

#include "sparc/attention.hpp"

namespace {

using Vecs = std::vector<std::vector<double>>;

TEST(Attention, SingleKeyLogitAndWeight) {
  const std::vector<double> q{1, 1, 1, 1};
  const Vecs keys{{1, 1, 1, 1}}, values{{3, 4, 5, 6}};
  // logit = 4 / sqrt(4) = 2; a lone key gets all the mass regardless.
  const auto r = sparc::attention_step(q, keys, values);
  ASSERT_EQ(r.weights.size(), 1u);
  EXPECT_DOUBLE_EQ(r.weights[0], 1.0);
  EXPECT_EQ(r.output, (std::vector<double>{3, 4, 5, 6}));

  // Check the logit value through a two-key softmax against a zero-logit key.
  const Vecs keys2{{1, 1, 1, 1}, {0, 0, 0, 0}}, values2{{1, 0, 0, 0}, {0, 1, 0, 0}};
  const auto r2 = sparc::attention_step(q, keys2, values2);
  EXPECT_NEAR(r2.weights[0], std::exp(2.0) / (std::exp(2.0) + 1.0), 1e-15);
}

TEST(Attention, SymmetricKeysSplitEvenly) {
  const std::vector<double> q{0.3, -0.7};
  const Vecs keys{{1, 2}, {1, 2}}, values{{1, 0}, {0, 1}};
  const auto r = sparc::attention_step(q, keys, values);
  EXPECT_DOUBLE_EQ(r.weights[0], 0.5);
  EXPECT_DOUBLE_EQ(r.weights[1], 0.5);
  EXPECT_DOUBLE_EQ(r.output[0], 0.5);
  EXPECT_DOUBLE_EQ(r.output[1], 0.5);
}

TEST(Attention, MultiplierAppliedWithoutRenormalization) {
  const std::vector<double> q{0.3, -0.7};
  const Vecs keys{{1, 2}, {1, 2}}, values{{1, 0}, {0, 1}};
  const std::vector<double> mult{1.21, 1.0};
  const auto r = sparc::attention_step(q, keys, values, {}, mult);
  // Recorded weights stay normalized; only the output sees the multiplier.
  EXPECT_DOUBLE_EQ(r.weights[0] + r.weights[1], 1.0);
  EXPECT_NEAR(r.output[0], 0.605, 1e-15);
  EXPECT_NEAR(r.output[1], 0.5, 1e-15);
}

TEST(Attention, LogitAdjustShiftsMass) {
  const std::vector<double> q{1, 0};
  const Vecs keys{{0, 0}, {0, 0}}, values{{1, 0}, {0, 1}};
  const std::vector<double> adj{std::log(3.0), 0.0};
  const auto r = sparc::attention_step(q, keys, values, adj);
  EXPECT_NEAR(r.weights[0], 0.75, 1e-15);
  EXPECT_NEAR(r.weights[1], 0.25, 1e-15);
}

TEST(Attention, Errors) {
  const std::vector<double> q{1, 0};
  EXPECT_THROW(sparc::attention_step(q, Vecs{}, Vecs{}), sparc::EmptyContextError);
  EXPECT_THROW(sparc::attention_step(q, Vecs{{1, 0}}, Vecs{{1, 0}, {0, 1}}), sparc::ShapeError);
  const std::vector<double> bad_adj{0.0, 0.0};
  EXPECT_THROW(sparc::attention_step(q, Vecs{{1, 0}}, Vecs{{1, 0}}, bad_adj), sparc::ShapeError);
  EXPECT_THROW(sparc::attention_step(q, Vecs{{1, 0, 0}}, Vecs{{1, 0}}), sparc::ShapeError);
}

TEST(Attention, WeightsAreASoftmaxForRandomInputs) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 40, d = 1 + rng() % 9;
    std::vector<double> q(d);
    for (auto& v : q) v = g(rng);
    Vecs keys(n, std::vector<double>(d)), values(n, std::vector<double>(d));
    for (auto& k : keys)
      for (auto& v : k) v = g(rng);
    for (auto& k : values)
      for (auto& v : k) v = g(rng);
    const auto r = sparc::attention_step(q, keys, values);
    double s = 0.0;
    for (double w : r.weights) {
      EXPECT_GE(w, 0.0);
      s += w;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

}  // namespace
