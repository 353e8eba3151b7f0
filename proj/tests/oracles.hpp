// Independent reference computations for the test suites. Nothing here
// calls into the dynamic programs it is used to check.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "unbed/core.hpp"
#include "unbed/crf.hpp"
#include "unbed/tagging.hpp"

namespace unbed::oracle {

/// Calls f on every tag sequence of length n over C tags, in lexicographic
/// order.
inline void for_each_path(std::size_t n, std::size_t C, const std::function<void(const std::vector<std::size_t>&)>& f) {
  std::vector<std::size_t> y(n, 0);
  while (true) {
    f(y);
    std::size_t i = n;
    while (i > 0 && ++y[i - 1] == C) y[--i] = 0;
    if (i == 0) return;
  }
}

inline double path_score(const Matrix& z, const std::vector<std::size_t>& y, const crf::ChainParams& p) {
  double s = p.start(0, y.front()) + p.end(0, y.back());
  for (std::size_t t = 0; t < y.size(); ++t) s += z(t, y[t]);
  for (std::size_t t = 0; t + 1 < y.size(); ++t) s += p.transitions(y[t], y[t + 1]);
  return s;
}

struct Enumerated {
  double log_z = 0.0;
  Matrix marginals;
  std::vector<std::size_t> best;
  double best_score = -std::numeric_limits<double>::infinity();
};

inline Enumerated enumerate(const Matrix& z, const crf::ChainParams& p) {
  const std::size_t n = z.rows(), C = z.cols();
  std::vector<std::vector<std::size_t>> paths;
  std::vector<double> scores;
  for_each_path(n, C, [&](const std::vector<std::size_t>& y) {
    paths.push_back(y);
    scores.push_back(path_score(z, y, p));
  });
  Enumerated out;
  const double m = *std::max_element(scores.begin(), scores.end());
  long double total = 0.0L;
  for (double s : scores) total += std::exp(static_cast<long double>(s - m));
  out.log_z = m + static_cast<double>(std::log(total));
  out.marginals = Matrix(n, C);
  for (std::size_t k = 0; k < paths.size(); ++k) {
    const double w = std::exp(scores[k] - out.log_z);
    for (std::size_t t = 0; t < n; ++t) out.marginals(t, paths[k][t]) += w;
    if (scores[k] > out.best_score) out.best_score = scores[k], out.best = paths[k];
  }
  return out;
}

/// Central finite difference of f at x along coordinate `i` of `v`.
inline double central_difference(std::vector<double>& v, std::size_t i, double h, const std::function<double()>& f) {
  const double x = v[i];
  v[i] = x + h;
  const double up = f();
  v[i] = x - h;
  const double down = f();
  v[i] = x;
  return (up - down) / (2.0 * h);
}

/// |a - b| / max(|a|, |b|, floor): relative error with an absolute floor
/// for near-zero gradients.
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.uniform(-scale, scale);
  return m;
}

inline crf::ChainParams random_chain(Rng& rng, std::size_t C, double scale = 1.0) {
  crf::ChainParams p(C);
  p.transitions = random_matrix(rng, C, C, scale);
  p.start = random_matrix(rng, 1, C, scale);
  p.end = random_matrix(rng, 1, C, scale);
  return p;
}

/// Random valid sentence: non-overlapping spans, each (head, tail) pair
/// related at most once.
inline Sentence random_sentence(Rng& rng, const TagVocabulary& v) {
  Sentence s;
  s.id = "r";
  const std::size_t n = 1 + rng.below(12);
  for (std::size_t t = 0; t < n; ++t) s.tokens.push_back("w" + std::to_string(rng.below(5)));
  std::size_t t = 0;
  while (t < n) {
    if (rng.bernoulli(0.4)) {
      const std::size_t len = 1 + rng.below(std::min<std::size_t>(3, n - t));
      s.entities.push_back({t, t + len, rng.below(v.entity_types().size())});
      t += len;
    } else {
      ++t;
    }
  }
  for (std::size_t h = 0; h < s.entities.size(); ++h)
    for (std::size_t k = 0; k < s.entities.size(); ++k)
      if (h != k && rng.bernoulli(0.3)) s.relations.push_back({h, rng.below(v.relation_types().size()), k});
  return s;
}

/// All BIO-consistent sequences reachable by rewriting I-X tags as B-X,
/// keeping those with the fewest rewrites.
inline std::vector<std::vector<std::size_t>> minimal_bio_repairs(const std::vector<std::size_t>& tags,
                                                                 const TagVocabulary& v) {
  std::vector<std::size_t> inside_positions;
  for (std::size_t t = 0; t < tags.size(); ++t) {
    const auto d = v.decode(tags[t]);
    if (d.kind != TagVocabulary::Kind::outside && !d.begin) inside_positions.push_back(t);
  }
  auto consistent = [&](const std::vector<std::size_t>& y) {
    for (std::size_t t = 0; t < y.size(); ++t) {
      const auto d = v.decode(y[t]);
      if (d.kind == TagVocabulary::Kind::outside || d.begin) continue;
      if (t == 0) return false;
      const auto prev = v.decode(y[t - 1]);
      if (prev.kind != d.kind || prev.label != d.label) return false;
    }
    return true;
  };
  std::vector<std::vector<std::size_t>> best;
  std::size_t best_changes = std::numeric_limits<std::size_t>::max();
  const std::size_t k = inside_positions.size();
  for (std::size_t mask = 0; mask < (std::size_t{1} << k); ++mask) {
    auto y = tags;
    std::size_t changes = 0;
    for (std::size_t b = 0; b < k; ++b)
      if (mask >> b & 1) {
        const auto d = v.decode(y[inside_positions[b]]);
        y[inside_positions[b]] = d.kind == TagVocabulary::Kind::entity ? v.entity_begin(d.label) : v.relation_begin(d.label);
        ++changes;
      }
    if (!consistent(y)) continue;
    if (changes < best_changes) best.clear(), best_changes = changes;
    if (changes == best_changes) best.push_back(y);
  }
  return best;
}

/// Span extraction from a BIO-consistent sequence by a direct scan.
inline std::vector<Triplet> triplets_from_consistent(const std::vector<std::size_t>& y, const TagVocabulary& v,
                                                     std::size_t query) {
  struct S {
    TagVocabulary::Kind kind;
    std::size_t label, a, b;
  };
  std::vector<S> spans;
  std::size_t t = 0;
  while (t < y.size()) {
    const auto d = v.decode(y[t]);
    if (d.kind == TagVocabulary::Kind::outside) {
      ++t;
      continue;
    }
    std::size_t e = t + 1;
    while (e < y.size()) {
      const auto n = v.decode(y[e]);
      if (n.kind != d.kind || n.label != d.label || n.begin) break;
      ++e;
    }
    spans.push_back({d.kind, d.label, t, e});
    t = e;
  }
  const S* e1 = nullptr;
  for (const auto& s : spans)
    if (s.kind == TagVocabulary::Kind::entity && s.a <= query && query < s.b) e1 = &s;
  std::vector<Triplet> out;
  if (!e1) return out;
  for (const auto& s : spans)
    if (s.kind == TagVocabulary::Kind::relation) out.push_back({e1->a, e1->b, e1->label, s.label, s.a, s.b});
  return out;
}

}  // namespace unbed::oracle
