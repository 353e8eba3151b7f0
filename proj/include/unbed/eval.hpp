// Triplet-level precision/recall/F1 and selection audits.
#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "unbed/corpus.hpp"
#include "unbed/model.hpp"
#include "unbed/selection.hpp"

namespace unbed {

struct Counts {
  std::size_t predicted = 0, gold = 0, correct = 0;

  double precision() const { return predicted ? static_cast<double>(correct) / static_cast<double>(predicted) : 0.0; }
  double recall() const { return gold ? static_cast<double>(correct) / static_cast<double>(gold) : 0.0; }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  Counts& operator+=(const Counts& o) {
    predicted += o.predicted, gold += o.gold, correct += o.correct;
    return *this;
  }
  bool operator==(const Counts&) const = default;
};

struct EvalReport {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  Counts counts;
  std::map<std::string, Counts> per_relation;
  bool operator==(const EvalReport&) const = default;
};

/// Exact-match comparison of deduplicated triplet sets. e1 must match span
/// and type; e2 is matched by span (the tag set carries no e2 type).
inline Counts match_triplets(std::vector<Triplet> predicted, std::vector<Triplet> gold) {
  std::sort(predicted.begin(), predicted.end());
  predicted.erase(std::unique(predicted.begin(), predicted.end()), predicted.end());
  std::sort(gold.begin(), gold.end());
  gold.erase(std::unique(gold.begin(), gold.end()), gold.end());
  Counts c{predicted.size(), gold.size(), 0};
  std::vector<Triplet> both;
  std::set_intersection(predicted.begin(), predicted.end(), gold.begin(), gold.end(), std::back_inserter(both));
  c.correct = both.size();
  return c;
}

inline EvalReport make_report(const Counts& total, std::map<std::string, Counts> per_relation = {}) {
  return {total.precision(), total.recall(), total.f1(), total, std::move(per_relation)};
}

/// Predicted triplets of one sentence: the deduplicated union of the
/// Viterbi-decoded triplets over every query position.
inline std::vector<Triplet> predict_triplets(const JointModel& model, const Sentence& s) {
  const auto ids = model.tokens().ids(s.tokens);
  std::set<Triplet> found;
  for (std::size_t p : enumerate_inference_queries(s))
    for (const auto& t : decode_triplets(model.predict(ids, p), model.tags(), p)) found.insert(t);
  return {found.begin(), found.end()};
}

/// Micro-averaged triplet P/R/F1 over `sentences`.
inline EvalReport evaluate(const JointModel& model, const std::vector<Sentence>& sentences) {
  const auto& vocab = model.tags();
  Counts total;
  std::map<std::string, Counts> per;
  for (const auto& name : vocab.relation_types()) per[name];
  for (const auto& s : sentences) {
    const auto pred = predict_triplets(model, s);
    const auto gold = gold_triplets(s);
    total += match_triplets(pred, gold);
    for (std::size_t r = 0; r < vocab.relation_types().size(); ++r) {
      std::vector<Triplet> pr, gr;
      for (const auto& t : pred)
        if (t.relation == r) pr.push_back(t);
      for (const auto& t : gold)
        if (t.relation == r) gr.push_back(t);
      per[vocab.relation_types()[r]] += match_triplets(pr, gr);
    }
  }
  return make_report(total, std::move(per));
}

/// Seeded disjoint split: the first part holds round(fraction * n)
/// sentences (at least one when n > 0).
inline std::pair<std::vector<Sentence>, std::vector<Sentence>> split_validation(const std::vector<Sentence>& test,
                                                                                double fraction,
                                                                                std::uint64_t seed) {
  require(fraction > 0.0 && fraction < 1.0, "invalid_input", "validation fraction must lie in (0, 1)");
  std::vector<std::size_t> order(test.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x73706c6974ULL));
  rng.shuffle(order);
  std::size_t k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(test.size())));
  if (!test.empty()) k = std::clamp<std::size_t>(k, 1, test.size());
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<long>(k));
  std::vector<std::size_t> rest_idx(order.begin() + static_cast<long>(k), order.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(rest_idx.begin(), rest_idx.end());
  std::pair<std::vector<Sentence>, std::vector<Sentence>> out;
  for (auto i : val_idx) out.first.push_back(test[i]);
  for (auto i : rest_idx) out.second.push_back(test[i]);
  return out;
}

struct AuditRow {
  std::size_t iteration = 0;
  std::size_t selected = 0;
  double clean_fraction_selected = 0.0;
  double clean_fraction_dataset = 0.0;
  double enrichment = 0.0;  // selected / dataset
};

/// Clean-fraction enrichment of each recorded selection. Returns nullopt
/// when any instance lacks a clean/corrupted flag.
inline std::optional<std::vector<AuditRow>> selection_audit(const SelectionState& state,
                                                            const std::vector<Provenance>& provenance) {
  if (provenance.size() != state.dataset_size || provenance.empty()) return std::nullopt;
  std::size_t clean = 0;
  for (auto p : provenance) {
    if (p == Provenance::unknown) return std::nullopt;
    clean += p == Provenance::clean;
  }
  const double base = static_cast<double>(clean) / static_cast<double>(provenance.size());
  std::vector<AuditRow> rows;
  for (const auto& it : state.history) {
    std::size_t c = 0;
    for (auto i : it.members) c += provenance.at(i) == Provenance::clean;
    const double frac = it.members.empty() ? 0.0 : static_cast<double>(c) / static_cast<double>(it.members.size());
    rows.push_back({it.iteration, it.members.size(), frac, base, base > 0.0 ? frac / base : 0.0});
  }
  return rows;
}

}  // namespace unbed
