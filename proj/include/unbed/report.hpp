// Report writers: score CSV, evaluation JSON and table.
#pragma once

#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unbed/eval.hpp"
#include "unbed/selection.hpp"
#include "unbed/uncertainty.hpp"

namespace unbed {

/// CSV columns: instance_id, kind, raw, normalized, provenance.
inline void write_scores_csv(std::ostream& out, const std::vector<UncertaintyScore>& scores,
                             const std::map<std::string, Provenance>& provenance = {}) {
  out << "instance_id,kind,raw,normalized,provenance\n";
  char buf[64];
  for (const auto& s : scores) {
    auto it = provenance.find(s.instance_id);
    out << s.instance_id << ',' << to_string(s.kind) << ',';
    std::snprintf(buf, sizeof buf, "%.17g", s.raw);
    out << buf << ',';
    std::snprintf(buf, sizeof buf, "%.17g", s.value);
    out << buf << ',' << (it == provenance.end() ? "unknown" : to_string(it->second)) << '\n';
  }
}

inline nlohmann::ordered_json report_json(const EvalReport& r) {
  auto counts = [](const Counts& c) {
    return nlohmann::ordered_json{{"predicted", c.predicted}, {"gold", c.gold}, {"correct", c.correct}};
  };
  nlohmann::ordered_json j = {{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}, {"counts", counts(r.counts)}};
  auto& per = j["per_relation"] = nlohmann::ordered_json::object();
  for (const auto& [name, c] : r.per_relation) {
    auto cj = counts(c);
    cj["precision"] = c.precision();
    cj["recall"] = c.recall();
    cj["f1"] = c.f1();
    per[name] = cj;
  }
  return j;
}

inline void print_report_table(std::ostream& out, const EvalReport& r) {
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %9s %9s %9s %9s %9s %9s\n", "relation", "precision", "recall", "f1",
                "predicted", "gold", "correct");
  out << line;
  auto row = [&](const std::string& name, const Counts& c) {
    std::snprintf(line, sizeof line, "%-16s %9.4f %9.4f %9.4f %9zu %9zu %9zu\n", name.c_str(), c.precision(),
                  c.recall(), c.f1(), c.predicted, c.gold, c.correct);
    out << line;
  };
  for (const auto& [name, c] : r.per_relation) row(name, c);
  row("(micro)", r.counts);
}

/// CSV columns: iteration, selected, mean_uncertainty, fallback,
/// clean_fraction_selected, clean_fraction_dataset, enrichment. The last
/// three are empty when provenance is unavailable.
inline void write_selection_audit_csv(std::ostream& out, const SelectionState& state,
                                      const std::optional<std::vector<AuditRow>>& audit) {
  out << "iteration,selected,mean_uncertainty,fallback,clean_fraction_selected,clean_fraction_dataset,enrichment\n";
  char buf[96];
  for (std::size_t i = 0; i < state.history.size(); ++i) {
    const auto& it = state.history[i];
    std::snprintf(buf, sizeof buf, "%.17g", it.mean_uncertainty);
    out << it.iteration << ',' << it.selected << ',' << buf << ',' << (it.fallback ? 1 : 0) << ',';
    if (audit) {
      const auto& row = (*audit)[i];
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", row.clean_fraction_selected, row.clean_fraction_dataset,
                    row.enrichment);
      out << buf;
    } else {
      out << ",,";
    }
    out << '\n';
  }
}

}  // namespace unbed
