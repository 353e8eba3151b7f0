#include <gtest/gtest.h>

#include "oracles.hpp"
#include "unbed/encoder.hpp"

namespace unbed {
namespace {

EncoderParams random_params(Rng& rng, std::size_t vocab, std::size_t d, double scale = 1.0) {
  EncoderParams p(vocab, d);
  p.visit([&](const char*, Matrix& m) {
    for (double& v : m.data()) v = rng.uniform(-scale, scale);
  });
  return p;
}

std::vector<std::size_t> random_ids(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<std::size_t> ids(n);
  for (auto& v : ids) v = rng.below(vocab);
  return ids;
}

/// Hand-set parameters shared with tests/golden/encoder_two_token.py.
EncoderParams golden_params() {
  EncoderParams p(3, 2);
  p.embeddings = Matrix(3, 2, {0.0, 0.0, 0.5, -0.25, 0.125, 0.75});
  p.offsets(8, 0) = 0.1, p.offsets(8, 1) = 0.2;
  p.offsets(9, 0) = -0.3, p.offsets(9, 1) = 0.05;
  p.mix_self = Matrix(2, 2, {0.6, -0.2, 0.1, 0.4});
  p.mix_left = Matrix(2, 2, {0.3, 0.0, -0.5, 0.2});
  p.mix_right = Matrix(2, 2, {0.0, 0.7, 0.25, -0.1});
  p.mix_bias = Matrix(1, 2, {0.05, -0.15});
  p.att_query = Matrix(2, 2, {1.0, 0.5, -0.5, 2.0});
  p.att_target = Matrix(2, 2, {0.2, -1.0, 0.3, 0.4});
  return p;
}

TEST(EncoderGolden, TwoTokensWidthTwoMatchesIndependentScript) {
  const std::vector<std::size_t> ids = {1, 2};
  const auto tape = encode(ids, 0, golden_params(), DropoutConfig::off());
  const double expected[2][4] = {
      {0.753065904869552, -0.229583738984439, 0.5115035011759457, -0.20709254197334637},
      {-0.03498571533277946, -0.1562104657686182, 0.4826930331446129, -0.20441008020542834},
  };
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(tape.output(t, k), expected[t][k], 1e-14);
}

TEST(Encoder, SingleTokenContextIsItsOwnState) {
  Rng rng(1);
  const auto p = random_params(rng, 4, 3);
  const std::vector<std::size_t> ids = {2};
  const auto tape = encode(ids, 0, p, DropoutConfig::off());
  ASSERT_EQ(tape.output.rows(), 1u);
  ASSERT_EQ(tape.output.cols(), 6u);
  EXPECT_DOUBLE_EQ(tape.attention(0, 0), 1.0);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(tape.output(0, k), tape.output(0, 3 + k));
}

TEST(Encoder, RateZeroIgnoresSeed) {
  Rng rng(2);
  const auto p = random_params(rng, 6, 4);
  const auto ids = random_ids(rng, 7, 6);
  const auto a = encode(ids, 3, p, DropoutConfig::sampled(0.0, 1));
  const auto b = encode(ids, 3, p, DropoutConfig::sampled(0.0, 999));
  EXPECT_EQ(a.output, b.output);
  EXPECT_EQ(a.output, encode(ids, 3, p, DropoutConfig::off()).output);
}

TEST(Encoder, SameSeedSameOutputDifferentSeedDifferentOutput) {
  Rng rng(3);
  const auto p = random_params(rng, 6, 4);
  const auto ids = random_ids(rng, 7, 6);
  const auto a = encode(ids, 1, p, DropoutConfig::sampled(0.3, 5));
  EXPECT_EQ(a.output, encode(ids, 1, p, DropoutConfig::sampled(0.3, 5)).output);
  EXPECT_NE(a.output, encode(ids, 1, p, DropoutConfig::sampled(0.3, 6)).output);
}

TEST(Encoder, AttentionRowsAreDistributions) {
  Rng rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 1 + rng.below(12);
    const auto p = random_params(rng, 5, 3, 2.0);
    const auto ids = random_ids(rng, n, 5);
    const auto tape = encode(ids, rng.below(n), p, DropoutConfig::sampled(0.2, rep));
    for (std::size_t t = 0; t < n; ++t) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_GE(tape.attention(t, j), 0.0);
        s += tape.attention(t, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Encoder, QueryPositionChangesTheRepresentation) {
  Rng rng(5);
  const auto p = random_params(rng, 5, 3);
  const std::vector<std::size_t> ids = {1, 2, 3, 4};
  EXPECT_NE(encode(ids, 0, p, DropoutConfig::off()).output, encode(ids, 2, p, DropoutConfig::off()).output);
}

TEST(Encoder, UnknownIdsUseTheOovRow) {
  Rng rng(6);
  const auto p = random_params(rng, 4, 2);
  const std::vector<std::size_t> unknown = {1, 99}, oov = {1, TokenVocabulary::kOov};
  EXPECT_EQ(encode(unknown, 0, p, DropoutConfig::off()).output, encode(oov, 0, p, DropoutConfig::off()).output);
}

TEST(Encoder, RejectsEmptyInstancesAndNonFiniteParameters) {
  Rng rng(7);
  auto p = random_params(rng, 4, 2);
  EXPECT_THROW(encode(std::vector<std::size_t>{}, 0, p, DropoutConfig::off()), Error);
  EXPECT_THROW(encode(std::vector<std::size_t>{1, 2}, 2, p, DropoutConfig::off()), Error);
  p.att_target(1, 1) = std::numeric_limits<double>::quiet_NaN();
  try {
    encode(std::vector<std::size_t>{1, 2}, 0, p, DropoutConfig::off());
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "non_finite");
  }
}

TEST(Dropout, MasksAreInvertedAndUnbiased) {
  const DropoutConfig cfg = DropoutConfig::sampled(0.25, 17);
  const auto m = DropoutMasks::draw(200, 50, cfg);
  double sum = 0.0;
  for (double v : m.embedding.data()) {
    EXPECT_TRUE(v == 0.0 || v == 1.0 / 0.75);
    sum += v;
  }
  const double mean = sum / static_cast<double>(m.embedding.size());
  // Standard error of the mean is sqrt(0.25 * 0.75) / 0.75 / 100 = 0.0058.
  EXPECT_NEAR(mean, 1.0, 0.03);
  EXPECT_THROW(DropoutMasks::draw(2, 2, DropoutConfig::sampled(1.0, 1)), Error);
}

TEST(Dropout, DeterministicModeIsTheStochasticExpectationNearTheLinearRegime) {
  // With small parameters tanh and the attention softmax are close to
  // affine/uniform, so the stochastic mean approaches the deterministic
  // output. Exactness is not expected through the non-linearities.
  Rng rng(8);
  const auto p = random_params(rng, 5, 3, 0.05);
  const std::vector<std::size_t> ids = {1, 4, 2};
  const auto det = encode(ids, 1, p, DropoutConfig::off()).output;
  Matrix mean(det.rows(), det.cols());
  const int passes = 20000;
  for (int k = 0; k < passes; ++k) {
    const auto out = encode(ids, 1, p, DropoutConfig::sampled(0.1, derive_seed(99, k))).output;
    for (std::size_t i = 0; i < mean.size(); ++i) mean.data()[i] += out.data()[i] / passes;
  }
  for (std::size_t i = 0; i < mean.size(); ++i) EXPECT_NEAR(mean.data()[i], det.data()[i], 2e-3);
}

double weighted_output(const std::vector<std::size_t>& ids, std::size_t q, const EncoderParams& p,
                       const DropoutConfig& cfg, const Matrix& w) {
  const auto out = encode(ids, q, p, cfg).output;
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += w.data()[i] * out.data()[i];
  return s;
}

TEST(EncoderBackward, MatchesFiniteDifferencesWithAndWithoutDropout) {
  Rng rng(9);
  for (int rep = 0; rep < 12; ++rep) {
    const std::size_t n = 1 + rng.below(5), d = 1 + rng.below(3), V = 4;
    auto p = random_params(rng, V, d, 0.8);
    const auto ids = random_ids(rng, n, V);
    const std::size_t q = rng.below(n);
    const auto cfg = rep % 2 ? DropoutConfig::sampled(0.3, 100 + rep) : DropoutConfig::off();
    const auto w = oracle::random_matrix(rng, n, 2 * d);
    EncoderParams grad(V, d);
    encode_backward(encode(ids, q, p, cfg), p, cfg, w, grad);
    std::vector<std::pair<Matrix*, Matrix*>> pairs;
    {
      std::vector<Matrix*> ps, gs;
      p.visit([&](const char*, Matrix& m) { ps.push_back(&m); });
      grad.visit([&](const char*, Matrix& m) { gs.push_back(&m); });
      for (std::size_t i = 0; i < ps.size(); ++i) pairs.emplace_back(ps[i], gs[i]);
    }
    for (auto [param, g] : pairs)
      for (std::size_t i = 0; i < param->size(); ++i) {
        const double fd = oracle::central_difference(param->data(), i, 1e-6,
                                                     [&] { return weighted_output(ids, q, p, cfg, w); });
        EXPECT_LT(oracle::relative_error(g->data()[i], fd), 1e-4) << "rep " << rep << " index " << i;
      }
  }
}

TEST(EncoderBackward, RejectsMaskReplayMismatch) {
  Rng rng(10);
  const auto p = random_params(rng, 4, 2);
  const std::vector<std::size_t> ids = {1, 2, 3};
  const auto tape = encode(ids, 0, p, DropoutConfig::sampled(0.2, 1));
  EncoderParams grad(4, 2);
  try {
    encode_backward(tape, p, DropoutConfig::sampled(0.2, 2), Matrix(3, 4, 1.0), grad);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "mask_replay");
  }
}

TEST(TokenVocabulary, SortedIdsWithOovAtZero) {
  const std::vector<std::string> toks = {"b", "a", "c", "a"};
  const auto v = TokenVocabulary::from_tokens(toks);
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"<oov>", "a", "b", "c"}));
  EXPECT_EQ(v.id("b"), 2u);
  EXPECT_EQ(v.id("zzz"), TokenVocabulary::kOov);
  EXPECT_EQ(TokenVocabulary::from_list(v.tokens()).fingerprint(), v.fingerprint());
  EXPECT_THROW(TokenVocabulary::from_list({"a"}), Error);
}

}  // namespace
}  // namespace unbed
