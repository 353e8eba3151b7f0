// Position-attentive token encoder.
//
//   e_t = E[x_t] + P[clip(t - p)]                      embedding + relative offset to the query
//   e'_t = dropout(e_t)                                 site 1
//   g_t = tanh(A e'_t + L e'_{t-1} + R e'_{t+1} + b)    bidirectional local mixer
//   h_t = dropout(g_t)                                  site 2
//   s_tj = h_p^T M h_j + h_t^T N h_j                    query- and target-conditioned self-matching
//   a_t = softmax_j(s_t),  c_t = sum_j a_tj h_j
//   u_t = [h_t | c_t]
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "unbed/core.hpp"

namespace unbed {

/// Token string -> embedding row. Row 0 is reserved for out-of-vocabulary
/// tokens.
class TokenVocabulary {
 public:
  static constexpr std::size_t kOov = 0;

  TokenVocabulary() : tokens_{"<oov>"} {}

  /// Sorted, so the id assignment does not depend on corpus order.
  template <typename Range>
  static TokenVocabulary from_tokens(const Range& tokens) {
    std::vector<std::string> all(std::begin(tokens), std::end(tokens));
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    TokenVocabulary v;
    for (auto& t : all) v.add(t);
    return v;
  }

  static TokenVocabulary from_list(const std::vector<std::string>& ordered) {
    require(!ordered.empty() && ordered.front() == "<oov>", "invalid_input", "token list must start with <oov>");
    TokenVocabulary v;
    for (std::size_t i = 1; i < ordered.size(); ++i) v.add(ordered[i]);
    return v;
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  std::size_t id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kOov : it->second;
  }

  std::vector<std::size_t> ids(const std::vector<std::string>& toks) const {
    std::vector<std::size_t> out(toks.size());
    for (std::size_t i = 0; i < toks.size(); ++i) out[i] = id(toks[i]);
    return out;
  }

  std::uint64_t fingerprint() const {
    std::uint64_t h = fnv1a("tokens");
    for (const auto& t : tokens_) h = fnv1a(t + "\x1f", h);
    return h;
  }

 private:
  void add(const std::string& t) {
    if (index_.count(t)) return;
    index_.emplace(t, tokens_.size());
    tokens_.push_back(t);
  }
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct DropoutConfig {
  enum class Mode { deterministic, stochastic };
  double rate = 0.1;
  Mode mode = Mode::deterministic;
  std::uint64_t seed = 0;

  static DropoutConfig off() { return {0.0, Mode::deterministic, 0}; }
  static DropoutConfig sampled(double rate, std::uint64_t seed) { return {rate, Mode::stochastic, seed}; }
  bool operator==(const DropoutConfig&) const = default;
};

/// Inverted-dropout masks for the two dropout sites: entries are 0 or
/// 1/(1-rate), or all ones in deterministic mode.
struct DropoutMasks {
  Matrix embedding;
  Matrix mixer;

  static DropoutMasks draw(std::size_t n, std::size_t d, const DropoutConfig& cfg) {
    require(cfg.rate >= 0.0 && cfg.rate < 1.0, "invalid_input", "dropout rate must lie in [0, 1)");
    DropoutMasks m{Matrix(n, d, 1.0), Matrix(n, d, 1.0)};
    if (cfg.mode == DropoutConfig::Mode::deterministic || cfg.rate == 0.0) return m;
    Rng rng(cfg.seed);
    const double keep = 1.0 / (1.0 - cfg.rate);
    for (double& v : m.embedding.data()) v = rng.uniform() < cfg.rate ? 0.0 : keep;
    for (double& v : m.mixer.data()) v = rng.uniform() < cfg.rate ? 0.0 : keep;
    return m;
  }
};

struct EncoderParams {
  static constexpr std::size_t kMaxOffset = 8;

  Matrix embeddings;  // V x d
  Matrix offsets;     // (2 * kMaxOffset + 1) x d, relative position to the query
  Matrix mix_self;    // d x d
  Matrix mix_left;    // d x d
  Matrix mix_right;   // d x d
  Matrix mix_bias;    // 1 x d
  Matrix att_query;   // d x d (M)
  Matrix att_target;  // d x d (N)

  EncoderParams() = default;
  EncoderParams(std::size_t vocab, std::size_t d)
      : embeddings(vocab, d),
        offsets(2 * kMaxOffset + 1, d),
        mix_self(d, d),
        mix_left(d, d),
        mix_right(d, d),
        mix_bias(1, d),
        att_query(d, d),
        att_target(d, d) {}

  std::size_t width() const noexcept { return embeddings.cols(); }

  template <typename F>
  void visit(F&& f) {
    f("encoder.embeddings", embeddings);
    f("encoder.offsets", offsets);
    f("encoder.mix_self", mix_self);
    f("encoder.mix_left", mix_left);
    f("encoder.mix_right", mix_right);
    f("encoder.mix_bias", mix_bias);
    f("encoder.att_query", att_query);
    f("encoder.att_target", att_target);
  }

  /// Symmetric uniform init scaled by 1/sqrt(d); biases start at zero.
  void initialize(Rng& rng) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(width()));
    visit([&](const char*, Matrix& m) {
      if (&m == &mix_bias) return;
      for (double& v : m.data()) v = rng.uniform(-scale, scale);
    });
  }

  bool operator==(const EncoderParams&) const = default;
};

inline std::size_t offset_bucket(std::size_t t, std::size_t query) {
  const auto k = static_cast<long>(EncoderParams::kMaxOffset);
  const long rel = std::clamp(static_cast<long>(t) - static_cast<long>(query), -k, k);
  return static_cast<std::size_t>(rel + k);
}

/// Intermediate values of one encode call, kept for the backward pass.
struct EncoderTape {
  std::vector<std::size_t> token_ids;
  std::size_t query = 0;
  DropoutConfig dropout;
  DropoutMasks masks;
  Matrix embedded;   // e' (after site 1)
  Matrix mixed;      // g = tanh(...)
  Matrix hidden;     // h (after site 2)
  Matrix query_key;  // 1 x d, M^T h_p
  Matrix target_key; // n x d, rows N h_j
  Matrix attention;  // n x n, rows a_t
  Matrix output;     // n x 2d, rows u_t
};

inline EncoderTape encode(std::span<const std::size_t> token_ids, std::size_t query, const EncoderParams& params,
                          const DropoutConfig& dropout) {
  const std::size_t n = token_ids.size(), d = params.width();
  require(n >= 1, "invalid_input", "cannot encode an empty instance");
  require(query < n, "invalid_input", "query position outside the instance");
  require(d > 0, "invalid_input", "encoder width must be positive");

  EncoderTape tape;
  tape.token_ids.assign(token_ids.begin(), token_ids.end());
  tape.query = query;
  tape.dropout = dropout;
  tape.masks = DropoutMasks::draw(n, d, dropout);

  tape.embedded = Matrix(n, d);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t id = token_ids[t] < params.embeddings.rows() ? token_ids[t] : TokenVocabulary::kOov;
    const auto emb = params.embeddings.row(id);
    const auto off = params.offsets.row(offset_bucket(t, query));
    for (std::size_t k = 0; k < d; ++k) tape.embedded(t, k) = (emb[k] + off[k]) * tape.masks.embedding(t, k);
  }

  bool finite = tape.embedded.all_finite();
  for (const Matrix* m : {&params.mix_self, &params.mix_left, &params.mix_right, &params.mix_bias,
                          &params.att_query, &params.att_target})
    finite = finite && m->all_finite();
  require(finite, "non_finite", "encoder parameters contain a non-finite value");

  tape.mixed = Matrix(n, d);
  tape.hidden = Matrix(n, d);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t i = 0; i < d; ++i) {
      double acc = params.mix_bias(0, i);
      for (std::size_t k = 0; k < d; ++k) {
        acc += params.mix_self(i, k) * tape.embedded(t, k);
        if (t > 0) acc += params.mix_left(i, k) * tape.embedded(t - 1, k);
        if (t + 1 < n) acc += params.mix_right(i, k) * tape.embedded(t + 1, k);
      }
      tape.mixed(t, i) = std::tanh(acc);
      tape.hidden(t, i) = tape.mixed(t, i) * tape.masks.mixer(t, i);
    }

  tape.query_key = Matrix(1, d);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < d; ++b) tape.query_key(0, a) += params.att_query(b, a) * tape.hidden(query, b);
  tape.target_key = Matrix(n, d);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) tape.target_key(j, a) += params.att_target(a, b) * tape.hidden(j, b);

  tape.attention = Matrix(n, n);
  tape.output = Matrix(n, 2 * d);
  std::vector<double> base(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += tape.query_key(0, k) * tape.hidden(j, k);
    base[j] = s;
  }
  for (std::size_t t = 0; t < n; ++t) {
    auto a = tape.attention.row(t);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      double s = base[j];
      for (std::size_t k = 0; k < d; ++k) s += tape.hidden(t, k) * tape.target_key(j, k);
      a[j] = s;
      mx = std::max(mx, s);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += a[j] = std::exp(a[j] - mx);
    for (std::size_t j = 0; j < n; ++j) a[j] /= z;
    for (std::size_t k = 0; k < d; ++k) {
      double c = 0.0;
      for (std::size_t j = 0; j < n; ++j) c += a[j] * tape.hidden(j, k);
      tape.output(t, k) = tape.hidden(t, k);
      tape.output(t, d + k) = c;
    }
  }
  return tape;
}

/// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(u) (n x 2d).
/// The dropout configuration must be the one the tape was recorded with.
inline void encode_backward(const EncoderTape& tape, const EncoderParams& params, const DropoutConfig& dropout,
                            const Matrix& upstream, EncoderParams& grad) {
  const std::size_t n = tape.token_ids.size(), d = params.width();
  require(dropout == tape.dropout, "mask_replay", "backward dropout configuration differs from the forward pass");
  require(upstream.rows() == n && upstream.cols() == 2 * d, "invalid_input", "upstream gradient shape mismatch");

  Matrix dh(n, d), dkey(n, d);
  std::vector<double> dquery(d, 0.0), da(n), ds(n);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t k = 0; k < d; ++k) dh(t, k) += upstream(t, k);
    const auto a = tape.attention.row(t);
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double v = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double dc = upstream(t, d + k);
        v += dc * tape.hidden(j, k);
        dh(j, k) += a[j] * dc;
      }
      da[j] = v;
      dot += a[j] * v;
    }
    for (std::size_t j = 0; j < n; ++j) ds[j] = a[j] * (da[j] - dot);
    for (std::size_t j = 0; j < n; ++j) {
      if (ds[j] == 0.0) continue;
      for (std::size_t k = 0; k < d; ++k) {
        dquery[k] += ds[j] * tape.hidden(j, k);
        dh(j, k) += ds[j] * tape.query_key(0, k);
        dh(t, k) += ds[j] * tape.target_key(j, k);
        dkey(j, k) += ds[j] * tape.hidden(t, k);
      }
    }
  }
  // target_key_j = N h_j
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t a = 0; a < d; ++a) {
      if (dkey(j, a) == 0.0) continue;
      for (std::size_t b = 0; b < d; ++b) {
        grad.att_target(a, b) += dkey(j, a) * tape.hidden(j, b);
        dh(j, b) += params.att_target(a, b) * dkey(j, a);
      }
    }
  // query_key = M^T h_p
  for (std::size_t b = 0; b < d; ++b)
    for (std::size_t a = 0; a < d; ++a) {
      grad.att_query(b, a) += tape.hidden(tape.query, b) * dquery[a];
      dh(tape.query, b) += params.att_query(b, a) * dquery[a];
    }

  Matrix dpre(n, d);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t i = 0; i < d; ++i) {
      const double g = tape.mixed(t, i);
      dpre(t, i) = dh(t, i) * tape.masks.mixer(t, i) * (1.0 - g * g);
    }

  Matrix de(n, d);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t i = 0; i < d; ++i) {
      const double gp = dpre(t, i);
      if (gp == 0.0) continue;
      grad.mix_bias(0, i) += gp;
      for (std::size_t k = 0; k < d; ++k) {
        grad.mix_self(i, k) += gp * tape.embedded(t, k);
        de(t, k) += params.mix_self(i, k) * gp;
        if (t > 0) {
          grad.mix_left(i, k) += gp * tape.embedded(t - 1, k);
          de(t - 1, k) += params.mix_left(i, k) * gp;
        }
        if (t + 1 < n) {
          grad.mix_right(i, k) += gp * tape.embedded(t + 1, k);
          de(t + 1, k) += params.mix_right(i, k) * gp;
        }
      }
    }

  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t id = tape.token_ids[t] < params.embeddings.rows() ? tape.token_ids[t] : TokenVocabulary::kOov;
    const std::size_t bucket = offset_bucket(t, tape.query);
    for (std::size_t k = 0; k < d; ++k) {
      const double g = de(t, k) * tape.masks.embedding(t, k);
      grad.embeddings(id, k) += g;
      grad.offsets(bucket, k) += g;
    }
  }
}

}  // namespace unbed
