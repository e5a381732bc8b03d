#include <gtest/gtest.h>

#include <sstream>

#include "sparc/harness.hpp"
#include "sparc/stdf.hpp"
#include "test_util.hpp"

namespace {

std::string desk_bytes() { return sparc::harness::serialize_model(testutil::seeded_model(42)); }

TEST(Stdf, CommittedFixtureLoads) {
  const auto m = sparc::stdf::load_file(testutil::fixture("desk.stdf"));
  EXPECT_EQ(m.config.num_layers, 4u);
  EXPECT_EQ(m.config.num_heads, 4u);
  EXPECT_EQ(m.config.head_dim, 8u);
  EXPECT_EQ(m.config.model_dim, 32u);
}

TEST(Stdf, RoundTripMatchesGenerator) {
  const auto m = testutil::seeded_model(7);
  std::istringstream is(sparc::harness::serialize_model(m));
  const auto back = sparc::stdf::read(is);
  EXPECT_EQ(back.config, m.config);
  EXPECT_EQ(back.weights, m.weights);
}

TEST(Stdf, BadMagicIsFormatError) {
  auto bytes = desk_bytes();
  bytes[0] = 'X';
  std::istringstream is(bytes);
  EXPECT_THROW(sparc::stdf::read(is), sparc::FormatError);
}

TEST(Stdf, InconsistentModelDimIsShapeError) {
  sparc::ModelConfig cfg;
  cfg.model_dim = 30;  // heads * head_dim = 32
  sparc::ModelWeights w;
  std::ostringstream os;
  sparc::stdf::write(os, cfg, w);
  std::istringstream is(os.str());
  EXPECT_THROW(sparc::stdf::read(is), sparc::ShapeError);
}

TEST(Stdf, TensorShapeMismatchIsShapeError) {
  auto m = testutil::seeded_model(3);
  m.weights.layers[1].wq = sparc::Matrix(32, 31);
  std::ostringstream os;
  sparc::stdf::write(os, m.config, m.weights);
  std::istringstream is(os.str());
  EXPECT_THROW(sparc::stdf::read(is), sparc::ShapeError);
}

TEST(Stdf, NonFiniteValueIsValueError) {
  auto m = testutil::seeded_model(3);
  m.weights.unembedding(0, 0) = std::numeric_limits<double>::quiet_NaN();
  std::ostringstream os;
  sparc::stdf::write(os, m.config, m.weights);
  std::istringstream is(os.str());
  EXPECT_THROW(sparc::stdf::read(is), sparc::ValueError);
}

TEST(Stdf, TruncatedStreamIsFormatError) {
  const auto bytes = desk_bytes();
  std::istringstream is(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(sparc::stdf::read(is), sparc::FormatError);
}

TEST(Stdf, UnknownVersionIsFormatError) {
  auto bytes = desk_bytes();
  const auto pos = bytes.find("\"version\":1");
  ASSERT_NE(pos, std::string::npos);
  bytes[pos + 10] = '9';
  std::istringstream is(bytes);
  EXPECT_THROW(sparc::stdf::read(is), sparc::FormatError);
}

TEST(Stdf, HeaderLayout) {
  const auto bytes = desk_bytes();
  ASSERT_GT(bytes.size(), 9u);
  EXPECT_EQ(bytes.substr(0, 5), "STDF1");
  const auto len = static_cast<unsigned char>(bytes[5]) | (static_cast<unsigned char>(bytes[6]) << 8) |
                   (static_cast<unsigned char>(bytes[7]) << 16) | (static_cast<unsigned char>(bytes[8]) << 24);
  const auto meta = nlohmann::json::parse(bytes.substr(9, len));
  EXPECT_EQ(meta["format"], "STDF");
  EXPECT_EQ(meta["version"], 1);
  EXPECT_EQ(meta["model_dim"], 32);
}

}  // namespace
