// Exact linear-chain CRF over tag scores z (n x C).
//
//   s(z, y) = start[y_0] + sum_t z_t[y_t] + sum_t trans[y_t][y_{t+1}] + end[y_{n-1}]
//   p(y | z) = exp(s(z, y) - log Z)
//
// Viterbi runs in log space; forward-backward runs in scaled probability
// space with per-position renormalisation.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "unbed/core.hpp"

namespace unbed::crf {

/// Transition structure of the chain. The projection producing z lives in
/// JointModel; everything here takes z as given.
struct ChainParams {
  Matrix transitions;  // C x C, transitions(a, b) scores a -> b
  Matrix start;        // 1 x C
  Matrix end;          // 1 x C

  ChainParams() = default;
  explicit ChainParams(std::size_t num_tags)
      : transitions(num_tags, num_tags), start(1, num_tags), end(1, num_tags) {}

  std::size_t num_tags() const noexcept { return transitions.rows(); }
  bool operator==(const ChainParams&) const = default;
};

using ChainGrad = ChainParams;

/// Posterior marginals P(y_t = c | z); each row sums to one.
using TokenMarginals = Matrix;

inline void check_shapes(const Matrix& z, const ChainParams& p) {
  require(z.rows() >= 1, "invalid_input", "CRF needs at least one position");
  require(z.cols() == p.num_tags(), "invalid_input", "emission width does not match tag count");
}

inline double sequence_score(const Matrix& z, std::span<const std::size_t> y, const ChainParams& p) {
  check_shapes(z, p);
  require(y.size() == z.rows(), "invalid_input", "tag sequence length does not match emissions");
  double s = p.start(0, y[0]) + p.end(0, y.back());
  for (std::size_t t = 0; t < y.size(); ++t) {
    s += z(t, y[t]);
    if (t + 1 < y.size()) s += p.transitions(y[t], y[t + 1]);
  }
  return s;
}

/// Forward/backward messages in scaled probability space. Every row of
/// `alpha` and `beta` is renormalised to sum to one; the discarded scale
/// factors are folded into `log_z`. Emissions are exponentiated after
/// subtracting their row maximum.
struct Lattice {
  Matrix emit;   // exp(z_t(c) - max_c z_t)
  Matrix trans;  // exp(transitions)
  Matrix alpha;  // proportional to the forward message at t (z_t included)
  Matrix beta;   // proportional to the backward message at t (end included)
  double log_z = 0.0;
};

inline Lattice forward_backward(const Matrix& z, const ChainParams& p) {
  check_shapes(z, p);
  const std::size_t n = z.rows(), C = z.cols();
  Lattice lat{Matrix(n, C), Matrix(C, C), Matrix(n, C), Matrix(n, C), 0.0};
  for (std::size_t i = 0; i < C * C; ++i) lat.trans.data()[i] = std::exp(p.transitions.data()[i]);
  for (std::size_t t = 0; t < n; ++t) {
    const auto row = z.row(t);
    const double m = *std::max_element(row.begin(), row.end());
    lat.log_z += m;
    for (std::size_t c = 0; c < C; ++c) lat.emit(t, c) = std::exp(row[c] - m);
  }

  auto normalise = [&](Matrix& msg, std::size_t t) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += msg(t, c);
    require(s > 0.0 && std::isfinite(s), "non_finite", "CRF message underflow/overflow at position " + std::to_string(t));
    for (std::size_t c = 0; c < C; ++c) msg(t, c) /= s;
    return s;
  };

  for (std::size_t c = 0; c < C; ++c) lat.alpha(0, c) = std::exp(p.start(0, c)) * lat.emit(0, c);
  lat.log_z += std::log(normalise(lat.alpha, 0));
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t a = 0; a < C; ++a) {
      const double w = lat.alpha(t - 1, a);
      const auto tr = lat.trans.row(a);
      for (std::size_t c = 0; c < C; ++c) lat.alpha(t, c) += w * tr[c];
    }
    for (std::size_t c = 0; c < C; ++c) lat.alpha(t, c) *= lat.emit(t, c);
    lat.log_z += std::log(normalise(lat.alpha, t));
  }
  double tail = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    lat.beta(n - 1, c) = std::exp(p.end(0, c));
    tail += lat.alpha(n - 1, c) * lat.beta(n - 1, c);
  }
  lat.log_z += std::log(tail);
  normalise(lat.beta, n - 1);
  std::vector<double> ahead(C);
  for (std::size_t t = n - 1; t-- > 0;) {
    for (std::size_t b = 0; b < C; ++b) ahead[b] = lat.emit(t + 1, b) * lat.beta(t + 1, b);
    for (std::size_t c = 0; c < C; ++c) {
      const auto tr = lat.trans.row(c);
      double acc = 0.0;
      for (std::size_t b = 0; b < C; ++b) acc += tr[b] * ahead[b];
      lat.beta(t, c) = acc;
    }
    normalise(lat.beta, t);
  }
  return lat;
}

inline double log_partition(const Matrix& z, const ChainParams& p) { return forward_backward(z, p).log_z; }

inline TokenMarginals marginals_from(const Lattice& lat) {
  const std::size_t n = lat.alpha.rows(), C = lat.alpha.cols();
  TokenMarginals m(n, C);
  for (std::size_t t = 0; t < n; ++t) {
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) sum += m(t, c) = lat.alpha(t, c) * lat.beta(t, c);
    for (std::size_t c = 0; c < C; ++c) m(t, c) /= sum;
  }
  return m;
}

/// Pairwise marginals P(y_t = a, y_{t+1} = b | z), accumulated over t with
/// per-position weights `weight(t, a, b)` applied.
template <typename Weight>
void accumulate_pairwise(const Lattice& lat, Matrix& out, Weight&& weight) {
  const std::size_t n = lat.alpha.rows(), C = lat.alpha.cols();
  std::vector<double> ahead(C), xi(C * C);
  for (std::size_t t = 0; t + 1 < n; ++t) {
    for (std::size_t b = 0; b < C; ++b) ahead[b] = lat.emit(t + 1, b) * lat.beta(t + 1, b);
    double total = 0.0;
    for (std::size_t a = 0; a < C; ++a)
      for (std::size_t b = 0; b < C; ++b) total += xi[a * C + b] = lat.alpha(t, a) * lat.trans(a, b) * ahead[b];
    for (std::size_t a = 0; a < C; ++a)
      for (std::size_t b = 0; b < C; ++b) out(a, b) += xi[a * C + b] / total * weight(t, a, b);
  }
}

inline TokenMarginals token_marginals(const Matrix& z, const ChainParams& p) {
  return marginals_from(forward_backward(z, p));
}

struct Decoded {
  std::vector<std::size_t> tags;
  double score = 0.0;
};

/// Highest-scoring path; ties resolve to the lowest tag id at every step.
inline Decoded viterbi_decode(const Matrix& z, const ChainParams& p) {
  check_shapes(z, p);
  const std::size_t n = z.rows(), C = z.cols();
  Matrix delta(n, C);
  std::vector<std::size_t> back(n * C, 0);
  for (std::size_t c = 0; c < C; ++c) delta(0, c) = p.start(0, c) + z(0, c);
  for (std::size_t t = 1; t < n; ++t)
    for (std::size_t c = 0; c < C; ++c) {
      std::size_t best = 0;
      double best_v = delta(t - 1, 0) + p.transitions(0, c);
      for (std::size_t a = 1; a < C; ++a) {
        const double v = delta(t - 1, a) + p.transitions(a, c);
        if (v > best_v) best_v = v, best = a;
      }
      delta(t, c) = best_v + z(t, c);
      back[t * C + c] = best;
    }
  Decoded out;
  out.tags.resize(n);
  std::size_t last = 0;
  double best_v = delta(n - 1, 0) + p.end(0, 0);
  for (std::size_t c = 1; c < C; ++c) {
    const double v = delta(n - 1, c) + p.end(0, c);
    if (v > best_v) best_v = v, last = c;
  }
  out.score = best_v;
  out.tags[n - 1] = last;
  for (std::size_t t = n - 1; t > 0; --t) out.tags[t - 1] = back[t * C + out.tags[t]];
  return out;
}

struct NllResult {
  double loss = 0.0;
  Matrix d_emissions;
  ChainGrad d_chain;
};

/// Negative log-likelihood -log p(y | z) and its gradient. The gradient of
/// log Z is the vector of expected feature counts from forward-backward.
inline NllResult nll_loss_and_grad(const Matrix& z, std::span<const std::size_t> y, const ChainParams& p,
                                   const Lattice& lat) {
  const double gold = sequence_score(z, y, p);
  const std::size_t n = z.rows(), C = z.cols();
  NllResult r{lat.log_z - gold, marginals_from(lat), ChainGrad(C)};
  require(std::isfinite(r.loss), "non_finite",
          "CRF loss is not finite (log Z = " + std::to_string(lat.log_z) + ", gold = " + std::to_string(gold) + ")");

  for (std::size_t c = 0; c < C; ++c) {
    r.d_chain.start(0, c) = r.d_emissions(0, c);
    r.d_chain.end(0, c) = r.d_emissions(n - 1, c);
  }
  accumulate_pairwise(lat, r.d_chain.transitions, [](std::size_t, std::size_t, std::size_t) { return 1.0; });

  r.d_chain.start(0, y[0]) -= 1.0;
  r.d_chain.end(0, y[n - 1]) -= 1.0;
  for (std::size_t t = 0; t < n; ++t) {
    r.d_emissions(t, y[t]) -= 1.0;
    if (t + 1 < n) r.d_chain.transitions(y[t], y[t + 1]) -= 1.0;
  }
  return r;
}

inline NllResult nll_loss_and_grad(const Matrix& z, std::span<const std::size_t> y, const ChainParams& p) {
  return nll_loss_and_grad(z, y, p, forward_backward(z, p));
}

struct MarginalVjp {
  Matrix d_emissions;
  ChainGrad d_chain;
};

/// Pulls an upstream gradient g = dL/dmu (n x C) on the token marginals back
/// to the emissions and chain parameters.
///
/// mu is the gradient of log Z, so the pullback is a covariance-vector
/// product: dL/dz_s(c) = E[1{y_s=c} G(y)] - mu_s(c) E[G(y)] with the additive
/// path function G(y) = sum_t g_t(y_t). The conditional expectations of the
/// prefix and suffix parts of G are carried through the lattice by one
/// extra forward and backward sweep.
inline MarginalVjp marginal_vjp(const Lattice& lat, const Matrix& g) {
  const std::size_t n = lat.alpha.rows(), C = lat.alpha.cols();
  require(g.rows() == n && g.cols() == C, "invalid_input", "upstream gradient shape mismatch");
  const TokenMarginals mu = marginals_from(lat);

  Matrix prefix(n, C);  // E[sum_{s<=t} g_s(y_s) | y_t = c]
  Matrix suffix(n, C);  // E[sum_{s>t} g_s(y_s) | y_t = c]
  std::vector<double> w(C);
  for (std::size_t c = 0; c < C; ++c) prefix(0, c) = g(0, c);
  for (std::size_t t = 1; t < n; ++t)
    for (std::size_t c = 0; c < C; ++c) {
      double norm = 0.0, acc = 0.0;
      for (std::size_t a = 0; a < C; ++a) {
        const double wa = lat.alpha(t - 1, a) * lat.trans(a, c);
        norm += wa;
        acc += wa * prefix(t - 1, a);
      }
      prefix(t, c) = g(t, c) + acc / norm;
    }
  for (std::size_t t = n - 1; t-- > 0;) {
    for (std::size_t b = 0; b < C; ++b) w[b] = lat.emit(t + 1, b) * lat.beta(t + 1, b);
    for (std::size_t c = 0; c < C; ++c) {
      double norm = 0.0, acc = 0.0;
      for (std::size_t b = 0; b < C; ++b) {
        const double wb = lat.trans(c, b) * w[b];
        norm += wb;
        acc += wb * (g(t + 1, b) + suffix(t + 1, b));
      }
      suffix(t, c) = acc / norm;
    }
  }

  double expected = 0.0;
  for (std::size_t c = 0; c < C; ++c) expected += mu(0, c) * (prefix(0, c) + suffix(0, c));

  MarginalVjp out{Matrix(n, C), ChainGrad(C)};
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t c = 0; c < C; ++c)
      out.d_emissions(t, c) = mu(t, c) * (prefix(t, c) + suffix(t, c) - expected);
  for (std::size_t c = 0; c < C; ++c) {
    out.d_chain.start(0, c) = out.d_emissions(0, c);
    out.d_chain.end(0, c) = out.d_emissions(n - 1, c);
  }
  accumulate_pairwise(lat, out.d_chain.transitions, [&](std::size_t t, std::size_t a, std::size_t b) {
    return prefix(t, a) + g(t + 1, b) + suffix(t + 1, b) - expected;
  });
  return out;
}

}  // namespace unbed::crf
