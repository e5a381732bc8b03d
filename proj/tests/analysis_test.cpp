#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "oracles/transport_oracle.hpp"
#include "sparc/analysis.hpp"
#include "test_util.hpp"

namespace {

namespace an = sparc::analysis;
using V = std::vector<double>;

TEST(NormalizeImageDistribution, Examples) {
  const auto p = an::normalize_image_distribution(V{0.3, 0.1, 0.6}, 2);
  EXPECT_NEAR(p[0], 0.75, 1e-15);
  EXPECT_NEAR(p[1], 0.25, 1e-15);
  const auto u = an::normalize_image_distribution(V{0.1, 0.1, 0.1, 0.7}, 3);
  for (double v : u) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  EXPECT_THROW(an::normalize_image_distribution(V{0.0, 0.0, 1.0}, 2), sparc::DegenerateDistributionError);
}

TEST(Wasserstein1d, Examples) {
  EXPECT_DOUBLE_EQ(an::wasserstein_1d(V{1, 0, 0, 0}, V{0, 0, 0, 1}), 3.0);
  EXPECT_DOUBLE_EQ(an::wasserstein_1d(V{0.2, 0.3, 0.5}, V{0.2, 0.3, 0.5}), 0.0);
  EXPECT_DOUBLE_EQ(an::wasserstein_1d(V{0.5, 0.5, 0}, V{0, 0.5, 0.5}), 1.0);
}

TEST(Wasserstein1d, Errors) {
  EXPECT_THROW(an::wasserstein_1d(V{0.5, 0.4}, V{0.5, 0.5}), sparc::ValueError);
  EXPECT_THROW(an::wasserstein_1d(V{1.0}, V{0.5, 0.5}), sparc::ShapeError);
  EXPECT_THROW(an::wasserstein_1d(V{0.5, 0.5}, V{0.5, 0.5}, V{1.0, 0.0}), sparc::ValueError);
}

TEST(Wasserstein1d, MatchesTransportOracle) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 6;
    const auto p = testutil::random_distribution(rng, n), q = testutil::random_distribution(rng, n);
    V pos(n);
    for (auto& x : pos) x = u(rng);
    std::sort(pos.begin(), pos.end());
    EXPECT_NEAR(an::wasserstein_1d(p, q, pos), oracle::min_cost_transport(p, q, pos, pos), 1e-9);
  }
}

TEST(Wasserstein1d, TranslationAndScaleCovariance) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-3.0, 3.0), g(0.1, 10.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 10;
    const auto p = testutil::random_distribution(rng, n), q = testutil::random_distribution(rng, n);
    V pos(n);
    for (auto& x : pos) x = u(rng);
    std::sort(pos.begin(), pos.end());
    const double s = u(rng), gamma = g(rng);
    V shifted = pos, scaled = pos;
    for (auto& x : shifted) x += s;
    for (auto& x : scaled) x *= gamma;
    const double w = an::wasserstein_1d(p, q, pos);
    EXPECT_NEAR(an::wasserstein_1d(p, q, shifted), w, 1e-9);
    EXPECT_NEAR(an::wasserstein_1d(p, q, scaled), gamma * w, 1e-9 * (1 + gamma * w));
  }
}

TEST(PairwiseDiversity, SmallCases) {
  const std::vector<V> one{{0.2, 0.3, 0.5}};
  const auto m1 = an::pairwise_diversity(one, 2, 1);
  EXPECT_EQ(m1.rows(), 1u);
  EXPECT_EQ(m1(0, 0), 0.0);

  const std::vector<V> same{{0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}};
  const auto m2 = an::pairwise_diversity(same, 2, 2);
  EXPECT_EQ(m2(0, 1), 0.0);
  EXPECT_EQ(m2(1, 0), 0.0);

  EXPECT_THROW(an::pairwise_diversity(one, 2, 2), sparc::RangeError);
}

TEST(PairwiseDiversity, RandomRowsMatchOracleAndFormAMetric) {
  std::mt19937_64 rng(99);
  const std::size_t n_image = 6;
  std::vector<V> rows;
  for (int r = 0; r < 4; ++r) {
    auto img = testutil::random_distribution(rng, n_image, false);
    V row;
    for (double v : img) row.push_back(0.6 * v);
    row.push_back(0.4);  // text mass
    rows.push_back(row);
  }
  const auto m = an::pairwise_diversity(rows, n_image, 4);
  const auto pos = an::unit_positions(n_image);
  for (std::size_t a = 0; a < 4; ++a) {
    EXPECT_EQ(m(a, a), 0.0);
    for (std::size_t b = 0; b < 4; ++b) {
      EXPECT_EQ(m(a, b), m(b, a));
      const auto pa = an::normalize_image_distribution(rows[a], n_image);
      const auto pb = an::normalize_image_distribution(rows[b], n_image);
      EXPECT_NEAR(m(a, b), oracle::min_cost_transport(pa, pb, pos, pos), 1e-9);
      for (std::size_t c = 0; c < 4; ++c) EXPECT_LE(m(a, c), m(a, b) + m(b, c) + 1e-9);
    }
  }
}

TEST(MeanPairwiseDistance, AveragesUpperTriangle) {
  sparc::Matrix m(3, 3);
  m(0, 1) = m(1, 0) = 1.0;
  m(0, 2) = m(2, 0) = 2.0;
  m(1, 2) = m(2, 1) = 3.0;
  EXPECT_DOUBLE_EQ(an::mean_pairwise_distance(m), 2.0);
  EXPECT_EQ(an::mean_pairwise_distance(sparc::Matrix(1, 1)), 0.0);
}

TEST(ImageShareCurve, Examples) {
  const std::vector<V> rows{{0.3, 0.2, 0.4, 0.1}, {0.1, 0.1, 0.1, 0.6, 0.1}};
  const auto c = an::image_share_curve(rows, 2);
  EXPECT_NEAR(c.image[0], 0.5, 1e-15);
  EXPECT_NEAR(c.image[1], 0.2, 1e-15);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(c.image[i] + c.text[i], 1.0, 1e-9);
  EXPECT_NEAR(c.image_per_token[0], 0.25, 1e-15);
  EXPECT_NEAR(c.text_per_token[1], 0.8 / 3.0, 1e-15);
  const auto z = an::image_share_curve(rows, 0);
  for (double s : z.image) EXPECT_EQ(s, 0.0);
}

TEST(SinkPartition, Examples) {
  sparc::Matrix states(3, 2);
  states(0, 0) = 1;
  states(1, 1) = -1;
  states(2, 0) = 50;
  EXPECT_EQ(an::sink_partition(states, 10.0), (std::vector<std::size_t>{2}));
  EXPECT_TRUE(an::sink_partition(states, 1e9).empty());
  sparc::Matrix flat(4, 2, 0.5);
  EXPECT_TRUE(an::sink_partition(flat, 1.5).empty());
  EXPECT_THROW(an::sink_partition(sparc::Matrix(1, 2), 10.0), sparc::RangeError);
  EXPECT_THROW(an::sink_partition(states, 1.0), sparc::ValueError);
}

TEST(SinkRatio, Examples) {
  const std::vector<std::size_t> s0{0};
  EXPECT_NEAR(an::sink_ratio(V{0.6, 0.2, 0.2}, 3, s0), 3.0, 1e-12);
  EXPECT_NEAR(an::sink_ratio(V{0.25, 0.25, 0.25, 0.25}, 4, s0), 1.0, 1e-15);
  EXPECT_EQ(an::sink_ratio(V{0.0, 1.0, 0.0}, 3, s0), 0.0);
  EXPECT_THROW(an::sink_ratio(V{0.5, 0.5}, 2, std::vector<std::size_t>{}), sparc::RangeError);
  EXPECT_THROW(an::sink_ratio(V{0.5, 0.5}, 2, std::vector<std::size_t>{0, 1}), sparc::RangeError);
}

TEST(RegionShare, Examples) {
  const V row{0.25, 0.5, 0.25, 0.9};
  EXPECT_NEAR(an::region_share(row, {false, true, false}), 0.5, 1e-15);
  EXPECT_NEAR(an::region_share(row, {true, true, true}), 1.0, 1e-15);
  EXPECT_EQ(an::region_share(row, {false, false, false}), 0.0);
  EXPECT_THROW(an::region_share(V{0, 0, 1}, {true, false}), sparc::DegenerateDistributionError);
}

TEST(RegionShare, MaskAndComplementSumToOne) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 12;
    auto row = testutil::random_distribution(rng, n + 3, false);
    std::vector<bool> mask(n), comp(n);
    for (std::size_t j = 0; j < n; ++j) {
      mask[j] = rng() % 2;
      comp[j] = !mask[j];
    }
    EXPECT_NEAR(an::region_share(row, mask) + an::region_share(row, comp), 1.0, 1e-12);
  }
}

TEST(CaptionSimilarity, Examples) {
  EXPECT_DOUBLE_EQ(an::caption_similarity(std::vector<V>{{80, 40}, {60}}), 60.0);
  EXPECT_DOUBLE_EQ(an::caption_similarity(std::vector<V>{{70}}), 70.0);
  EXPECT_DOUBLE_EQ(an::caption_similarity(std::vector<V>{{33, 33, 33}, {33, 33}, {33}}), 33.0);
  EXPECT_THROW(an::caption_similarity(std::vector<V>{}), sparc::RangeError);
  EXPECT_THROW(an::caption_similarity(std::vector<V>{{101}}), sparc::ValueError);
  EXPECT_THROW(an::caption_similarity(std::vector<V>{{1}, {2}}), sparc::ShapeError);
}

TEST(CaptionSimilarity, PermutationInvariant) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng() % 6;
    std::vector<V> full(n, V(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) full[i][j] = full[j][i] = u(rng);
    const auto upper = [&](const std::vector<std::size_t>& order) {
      std::vector<V> up(n - 1);
      for (std::size_t i = 0; i + 1 < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) up[i].push_back(full[order[i]][order[j]]);
      return up;
    };
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    const double base = an::caption_similarity(upper(order));
    std::shuffle(order.begin(), order.end(), rng);
    EXPECT_NEAR(an::caption_similarity(upper(order)), base, 1e-12);
  }
}

TEST(SelectionHistogram, Examples) {
  EXPECT_EQ(an::selection_histogram(std::vector<std::size_t>{5, 0, 2}, 2), (an::SelectionHistogram{2, 1}));
  EXPECT_EQ(an::selection_histogram(std::vector<std::size_t>{0, 0, 0, 0}, 1), (an::SelectionHistogram{0, 4}));
  EXPECT_EQ(an::selection_histogram(std::vector<std::size_t>{3, 0, 1, 0}, 1).num_high, 2u);
  EXPECT_THROW(an::selection_histogram(std::vector<std::size_t>{1}, 0), sparc::ValueError);
}

TEST(TraceJsonl, RoundTrip) {
  const auto m = testutil::seeded_model(42);
  const auto res = sparc::generate(m, testutil::seeded_request(m, 42, sparc::InterventionMode::sparc, 12));
  std::stringstream ss;
  sparc::write_jsonl(ss, res.trace);
  EXPECT_EQ(sparc::read_jsonl(ss), res.trace);
  std::istringstream bad("{\"step\": 1}\n");
  EXPECT_THROW(sparc::read_jsonl(bad), sparc::FormatError);
}

}  // namespace
