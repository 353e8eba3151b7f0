// Instance-level uncertainty scores over per-token tag distributions.
//
// Data uncertainty (winning score, entropy) reads one distribution; model
// uncertainty (probability variance) reads K Monte Carlo dropout passes.
// Every score reports the raw formula value and a normalized value in [0, 1]
// on which selection thresholds operate.
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "unbed/model.hpp"

namespace unbed {

enum class UncertaintyKind { ws, entropy, pv };

inline const char* to_string(UncertaintyKind k) {
  switch (k) {
    case UncertaintyKind::ws: return "ws";
    case UncertaintyKind::entropy: return "entropy";
    case UncertaintyKind::pv: return "pv";
  }
  return "?";
}

inline UncertaintyKind uncertainty_kind_from_string(std::string_view s) {
  if (s == "ws") return UncertaintyKind::ws;
  if (s == "entropy") return UncertaintyKind::entropy;
  if (s == "pv") return UncertaintyKind::pv;
  throw Error("invalid_input", "unknown uncertainty kind '" + std::string(s) + "'");
}

struct UncertaintyScore {
  std::string instance_id;
  UncertaintyKind kind = UncertaintyKind::ws;
  double value = 0.0;  // normalized, in [0, 1]
  double raw = 0.0;
};

struct McConfig {
  std::size_t passes = 8;  // K
  std::uint64_t seed = 0;
  double dropout_rate = 0.1;
};

inline void check_distribution(const Matrix& p) {
  require(p.rows() >= 1 && p.cols() >= 1, "invalid_input", "empty token distribution");
}

/// True when every entry of the row is equal (a uniform distribution).
inline bool is_flat(std::span<const double> row) {
  return std::all_of(row.begin(), row.end(), [&](double v) { return v == row.front(); });
}

/// Raw: -(1/n) sum_t max_c P. Normalized: (1 - mean max) * C / (C - 1),
/// accumulated per row so that flat rows contribute exactly 1.
inline UncertaintyScore winning_score(const Matrix& p, std::string id = {}) {
  check_distribution(p);
  const std::size_t n = p.rows(), C = p.cols();
  double mean_max = 0.0, norm = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const auto row = p.row(t);
    const double m = *std::max_element(row.begin(), row.end());
    mean_max += m;
    if (C > 1) norm += is_flat(row) ? 1.0 : (1.0 - m) * static_cast<double>(C) / static_cast<double>(C - 1);
  }
  mean_max /= static_cast<double>(n);
  norm /= static_cast<double>(n);
  return {std::move(id), UncertaintyKind::ws, std::clamp(norm, 0.0, 1.0), -mean_max};
}

/// Raw: (1/n) sum_t sum_c P log P (the negated mean entropy, <= 0).
/// Normalized: mean Shannon entropy / log C, with flat rows counted as
/// exactly 1.
inline UncertaintyScore entropy_score(const Matrix& p, std::string id = {}) {
  check_distribution(p);
  const std::size_t n = p.rows(), C = p.cols();
  const double log_c = std::log(static_cast<double>(C));
  double acc = 0.0, norm = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const auto row = p.row(t);
    double r = 0.0;
    for (double v : row)
      if (v > 0.0) r += v * std::log(v);
    acc += r;
    if (C > 1) norm += is_flat(row) ? 1.0 : -r / log_c;
  }
  const double raw = acc / static_cast<double>(n);
  norm /= static_cast<double>(n);
  return {std::move(id), UncertaintyKind::entropy, std::clamp(norm, 0.0, 1.0), raw};
}

/// Raw: (1/n) sum_t sum_c Var_k[P_k(y_t = c)] with the population variance.
/// Normalized: min(1, raw / 0.25).
inline UncertaintyScore variance_score(std::span<const Matrix> samples, std::string id = {}) {
  require(samples.size() >= 2, "invalid_input", "probability variance needs at least two passes");
  const std::size_t n = samples[0].rows(), C = samples[0].cols();
  const double K = static_cast<double>(samples.size());
  double acc = 0.0;
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t c = 0; c < C; ++c) {
      // Welford's update: identical passes give exactly zero variance.
      double mean = 0.0, m2 = 0.0, k = 0.0;
      for (const auto& s : samples) {
        const double x = s(t, c), delta = x - mean;
        mean += delta / ++k;
        m2 += delta * (x - mean);
      }
      acc += m2 / K;
    }
  const double raw = acc / static_cast<double>(n);
  return {std::move(id), UncertaintyKind::pv, std::min(1.0, raw / 0.25), raw};
}

/// K stochastic passes with masks drawn from one stream seeded by
/// (mc.seed, example id); reproducible per instance regardless of order.
inline UncertaintyScore probability_variance(const JointModel& model, const Example& ex, const McConfig& mc) {
  require(mc.passes >= 2, "invalid_input", "probability variance needs K >= 2");
  Rng stream(derive_seed(mc.seed, fnv1a(ex.id)));
  std::vector<Matrix> samples;
  samples.reserve(mc.passes);
  for (std::size_t k = 0; k < mc.passes; ++k)
    samples.push_back(model.token_distribution(ex, DropoutConfig::sampled(mc.dropout_rate, stream.next())));
  return variance_score(samples, ex.id);
}

/// Data uncertainty of one distribution; `combine` takes the max of the
/// normalized WS and entropy scores.
inline UncertaintyScore data_uncertainty(const Matrix& p, UncertaintyKind kind, std::string id = {},
                                         bool combine = false) {
  require(kind != UncertaintyKind::pv, "invalid_input", "pv is a model uncertainty");
  auto s = kind == UncertaintyKind::ws ? winning_score(p, id) : entropy_score(p, id);
  if (combine) {
    const auto other = kind == UncertaintyKind::ws ? entropy_score(p) : winning_score(p);
    s.value = std::max(s.value, other.value);
  }
  return s;
}

struct ScoreOptions {
  McConfig mc;
  bool combine = false;
  unsigned threads = 1;
  /// Externally supplied token distributions keyed by instance id; used in
  /// place of the model for WS/entropy when present.
  const std::map<std::string, Matrix>* imported = nullptr;
};

/// One score per example, in input order. Failures are rethrown with the
/// instance id attached.
inline std::vector<UncertaintyScore> score_dataset(const JointModel& model, const std::vector<Example>& examples,
                                                   UncertaintyKind kind, const ScoreOptions& opt = {}) {
  std::vector<UncertaintyScore> out(examples.size());
  auto score_one = [&](std::size_t i) {
    const Example& ex = examples[i];
    try {
      if (kind == UncertaintyKind::pv) {
        out[i] = probability_variance(model, ex, opt.mc);
        return;
      }
      if (opt.imported) {
        auto it = opt.imported->find(ex.id);
        if (it != opt.imported->end()) {
          require(it->second.rows() == ex.token_ids.size() && it->second.cols() == model.tags().size(),
                  "invalid_input", "imported probabilities have the wrong shape");
          out[i] = data_uncertainty(it->second, kind, ex.id, opt.combine);
          return;
        }
      }
      out[i] = data_uncertainty(model.token_distribution(ex, DropoutConfig::off()), kind, ex.id, opt.combine);
    } catch (const Error& e) {
      throw Error(e.code(), "instance '" + ex.id + "': " + e.what());
    }
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(examples.size())));
  if (workers <= 1) {
    for (std::size_t i = 0; i < examples.size(); ++i) score_one(i);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < examples.size(); i += workers) score_one(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

/// Reads JSON-lines rows {"id": ..., "probs": [[p_00, p_01, ...], ...]}.
inline std::map<std::string, Matrix> load_token_probabilities(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "io", "cannot open probability file '" + path + "'");
  std::map<std::string, Matrix> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto& rows = j.at("probs");
      require(rows.is_array() && !rows.empty(), "invalid_input", "probs must be a non-empty array");
      Matrix m(rows.size(), rows[0].size());
      for (std::size_t t = 0; t < rows.size(); ++t) {
        require(rows[t].size() == m.cols(), "invalid_input", "ragged probability rows");
        double sum = 0.0;
        for (std::size_t c = 0; c < m.cols(); ++c) sum += m(t, c) = rows[t][c].get<double>();
        require(std::abs(sum - 1.0) < 1e-6, "invalid_input", "probability row does not sum to one");
      }
      out[j.at("id").get<std::string>()] = std::move(m);
    } catch (const nlohmann::json::exception& e) {
      throw Error("invalid_input", path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace unbed
