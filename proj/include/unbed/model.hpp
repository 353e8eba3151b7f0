// Joint extraction model: encoder -> linear tag scores z_t = W u_t + b ->
// linear-chain CRF.
#pragma once

#include <string>
#include <vector>

#include "unbed/crf.hpp"
#include "unbed/encoder.hpp"
#include "unbed/tagging.hpp"

namespace unbed {

/// Provenance-free view of an Instance. Everything on the training path
/// consumes Examples, so corruption flags cannot leak into learning.
struct Example {
  std::string id;
  std::vector<std::size_t> token_ids;
  std::size_t query = 0;
  std::vector<std::size_t> tags;
};

inline Example to_example(const Instance& inst, const TokenVocabulary& tokens) {
  return {inst.id, tokens.ids(inst.tokens), inst.query, inst.tags};
}

inline std::vector<Example> to_examples(const std::vector<Instance>& insts, const TokenVocabulary& tokens) {
  std::vector<Example> out;
  out.reserve(insts.size());
  for (const auto& i : insts) out.push_back(to_example(i, tokens));
  return out;
}

/// Which per-token distribution P(y_t = c | x) feeds the uncertainty scores
/// and the ensemble loss.
enum class TokenDistribution { crf_marginals, softmax };

struct ModelParams {
  EncoderParams encoder;
  Matrix projection;       // C x 2d
  Matrix projection_bias;  // 1 x C
  crf::ChainParams chain;

  ModelParams() = default;
  ModelParams(std::size_t vocab, std::size_t d, std::size_t num_tags)
      : encoder(vocab, d), projection(num_tags, 2 * d), projection_bias(1, num_tags), chain(num_tags) {}

  std::size_t num_tags() const noexcept { return projection.rows(); }

  template <typename F>
  void visit(F&& f) {
    encoder.visit(f);
    f("crf.projection", projection);
    f("crf.projection_bias", projection_bias);
    f("crf.transitions", chain.transitions);
    f("crf.start", chain.start);
    f("crf.end", chain.end);
  }
  template <typename F>
  void visit(F&& f) const {
    const_cast<ModelParams*>(this)->visit([&](const char* name, Matrix& m) { f(name, static_cast<const Matrix&>(m)); });
  }

  /// Same shapes, all zero.
  ModelParams zeros_like() const {
    ModelParams z = *this;
    z.visit([](const char*, Matrix& m) { m.set_zero(); });
    return z;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const char*, const Matrix& m) { n += m.size(); });
    return n;
  }

  bool operator==(const ModelParams&) const = default;
};

using ModelGrad = ModelParams;

/// Adds `scale * src` into `dst` tensor by tensor.
inline void accumulate(ModelParams& dst, const ModelParams& src, double scale = 1.0) {
  std::vector<const Matrix*> from;
  src.visit([&](const char*, const Matrix& m) { from.push_back(&m); });
  std::size_t i = 0;
  dst.visit([&](const char*, Matrix& m) {
    const auto& s = from[i++]->data();
    auto& d = m.data();
    for (std::size_t k = 0; k < d.size(); ++k) d[k] += scale * s[k];
  });
}

class JointModel {
 public:
  /// Result of one forward pass, retained for backward.
  struct Pass {
    EncoderTape encoder;
    Matrix emissions;  // n x C
    crf::Lattice lattice;
    Matrix distribution;  // n x C, P(y_t = c | x) per the model's TokenDistribution
  };

  JointModel() = default;
  JointModel(TokenVocabulary tokens, TagVocabulary tags, std::size_t width, std::uint64_t init_seed,
             TokenDistribution dist = TokenDistribution::crf_marginals)
      : tokens_(std::move(tokens)),
        tags_(std::move(tags)),
        params_(tokens_.size(), width, tags_.size()),
        distribution_(dist) {
    require(width > 0, "invalid_input", "encoder width must be positive");
    Rng rng(init_seed);
    params_.encoder.initialize(rng);
    const double scale = 1.0 / std::sqrt(static_cast<double>(2 * width));
    for (double& v : params_.projection.data()) v = rng.uniform(-scale, scale);
  }

  JointModel(TokenVocabulary tokens, TagVocabulary tags, ModelParams params,
             TokenDistribution dist = TokenDistribution::crf_marginals)
      : tokens_(std::move(tokens)), tags_(std::move(tags)), params_(std::move(params)), distribution_(dist) {
    require(params_.encoder.embeddings.rows() == tokens_.size(), "invalid_input",
            "embedding rows do not match the token vocabulary");
    require(params_.num_tags() == tags_.size(), "invalid_input", "projection rows do not match the tag vocabulary");
  }

  const TokenVocabulary& tokens() const noexcept { return tokens_; }
  const TagVocabulary& tags() const noexcept { return tags_; }
  const ModelParams& params() const noexcept { return params_; }
  ModelParams& params() noexcept { return params_; }
  TokenDistribution distribution() const noexcept { return distribution_; }
  void set_distribution(TokenDistribution d) noexcept { distribution_ = d; }
  std::size_t width() const noexcept { return params_.encoder.width(); }

  std::uint64_t fingerprint() const { return fnv1a(std::to_string(tags_.fingerprint()), tokens_.fingerprint()); }

  Pass forward(const Example& ex, const DropoutConfig& dropout) const {
    require(ex.token_ids.size() >= 1, "invalid_input", "example '" + ex.id + "' is empty");
    Pass pass;
    pass.encoder = encode(ex.token_ids, ex.query, params_.encoder, dropout);
    pass.emissions = project(pass.encoder.output);
    pass.lattice = crf::forward_backward(pass.emissions, params_.chain);
    pass.distribution = distribution_ == TokenDistribution::crf_marginals ? crf::marginals_from(pass.lattice)
                                                                          : row_softmax(pass.emissions);
    return pass;
  }

  /// Token distribution only.
  Matrix token_distribution(const Example& ex, const DropoutConfig& dropout) const {
    return forward(ex, dropout).distribution;
  }

  std::vector<std::size_t> predict(std::span<const std::size_t> token_ids, std::size_t query) const {
    const auto tape = encode(token_ids, query, params_.encoder, DropoutConfig::off());
    return crf::viterbi_decode(project(tape.output), params_.chain).tags;
  }

  /// CRF negative log-likelihood of the gold tags with its gradient w.r.t.
  /// the emissions and chain parameters.
  crf::NllResult nll(const Example& ex, const Pass& pass) const {
    return crf::nll_loss_and_grad(pass.emissions, ex.tags, params_.chain, pass.lattice);
  }

  /// Pulls dL/dP (n x C) on the token distribution back to the emissions
  /// and chain parameters.
  crf::MarginalVjp distribution_pullback(const Pass& pass, const Matrix& upstream) const {
    if (distribution_ == TokenDistribution::crf_marginals) return crf::marginal_vjp(pass.lattice, upstream);
    const Matrix& p = pass.distribution;
    crf::MarginalVjp out{Matrix(p.rows(), p.cols()), crf::ChainGrad(p.cols())};
    for (std::size_t t = 0; t < p.rows(); ++t) {
      double dot = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) dot += p(t, c) * upstream(t, c);
      for (std::size_t c = 0; c < p.cols(); ++c) out.d_emissions(t, c) = p(t, c) * (upstream(t, c) - dot);
    }
    return out;
  }

  /// Accumulates scale * (dL/dz, dL/dchain) through the projection and
  /// encoder into `grad`.
  void backward(const Pass& pass, const DropoutConfig& dropout, const Matrix& d_emissions,
                const crf::ChainGrad& d_chain, ModelGrad& grad, double scale = 1.0) const {
    for (auto [dst, src] : {std::pair{&grad.chain.transitions, &d_chain.transitions},
                            std::pair{&grad.chain.start, &d_chain.start}, std::pair{&grad.chain.end, &d_chain.end}})
      for (std::size_t k = 0; k < dst->size(); ++k) dst->data()[k] += scale * src->data()[k];

    const Matrix& u = pass.encoder.output;
    const std::size_t n = u.rows(), C = params_.num_tags(), w = u.cols();
    Matrix du(n, w);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t c = 0; c < C; ++c) {
        const double g = scale * d_emissions(t, c);
        if (g == 0.0) continue;
        grad.projection_bias(0, c) += g;
        for (std::size_t k = 0; k < w; ++k) {
          grad.projection(c, k) += g * u(t, k);
          du(t, k) += g * params_.projection(c, k);
        }
      }
    encode_backward(pass.encoder, params_.encoder, dropout, du, grad.encoder);
  }

  bool all_finite() const {
    bool ok = true;
    params_.visit([&](const char*, const Matrix& m) { ok = ok && m.all_finite(); });
    return ok;
  }

 private:
  Matrix project(const Matrix& u) const {
    const std::size_t n = u.rows(), C = params_.num_tags(), w = u.cols();
    Matrix z(n, C);
    for (std::size_t t = 0; t < n; ++t) {
      const auto ut = u.row(t);
      for (std::size_t c = 0; c < C; ++c) {
        const auto wc = params_.projection.row(c);
        double acc = params_.projection_bias(0, c);
        for (std::size_t k = 0; k < w; ++k) acc += wc[k] * ut[k];
        z(t, c) = acc;
      }
    }
    return z;
  }

  static Matrix row_softmax(const Matrix& z) {
    Matrix p(z.rows(), z.cols());
    for (std::size_t t = 0; t < z.rows(); ++t) {
      const double lse = log_sum_exp(z.row(t));
      for (std::size_t c = 0; c < z.cols(); ++c) p(t, c) = std::exp(z(t, c) - lse);
    }
    return p;
  }

  TokenVocabulary tokens_;
  TagVocabulary tags_;
  ModelParams params_;
  TokenDistribution distribution_ = TokenDistribution::crf_marginals;
};

}  // namespace unbed
