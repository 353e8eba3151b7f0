// JSON-lines corpus format (v1) and the provenance sidecar.
//
// Corpus file:
//   {"format":"unbed-corpus","version":"v1","entity_types":[...],"relation_types":[...]}
//   {"id":"s0","tokens":[...],"entities":[[start,end,"TYPE"],...],
//    "relations":[[head_index,"RELATION",tail_index],...],"provenance":"clean"}
//   ...
// `provenance` is optional. Entity spans are half-open token ranges;
// relation endpoints index the sentence's entity list.
//
// Provenance sidecar:
//   {"format":"unbed-provenance","version":"v1"}
//   {"id":"s0","status":"corrupted","corruptions":[{"kind":"relation_flip",...}],
//    "gold":{"entities":[...],"relations":[...]}}
#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unbed/tagging.hpp"

namespace unbed {

using ordered_json = nlohmann::ordered_json;

inline constexpr const char* kCorpusFormat = "unbed-corpus";
inline constexpr const char* kProvenanceFormat = "unbed-provenance";
inline constexpr const char* kFormatVersion = "v1";

struct Corpus {
  TagVocabulary vocab;
  std::vector<Sentence> sentences;
  bool operator==(const Corpus&) const = default;
};

/// One recorded corruption. `fields` carries kind-specific details
/// (relation index, old/new type, old/new span, ...).
struct Corruption {
  std::string kind;
  std::map<std::string, std::string> fields;
  bool operator==(const Corruption&) const = default;
};

struct SentenceProvenance {
  Provenance status = Provenance::clean;
  std::vector<Corruption> corruptions;
  std::vector<EntitySpan> gold_entities;
  std::vector<Relation> gold_relations;
  bool operator==(const SentenceProvenance&) const = default;
};

using ProvenanceTable = std::map<std::string, SentenceProvenance>;

namespace detail {

inline ordered_json entities_json(const std::vector<EntitySpan>& es, const TagVocabulary& v) {
  auto arr = ordered_json::array();
  for (const auto& e : es) arr.push_back({e.start, e.end, v.entity_types().at(e.type)});
  return arr;
}

inline ordered_json relations_json(const std::vector<Relation>& rs, const TagVocabulary& v) {
  auto arr = ordered_json::array();
  for (const auto& r : rs) arr.push_back({r.head, v.relation_types().at(r.type), r.tail});
  return arr;
}

inline std::vector<EntitySpan> parse_entities(const ordered_json& j, const TagVocabulary& v) {
  std::vector<EntitySpan> out;
  for (const auto& e : j) {
    require(e.is_array() && e.size() == 3, "invalid_input", "entity must be [start, end, type]");
    const auto type = v.entity_type_id(e[2].get<std::string>());
    require(type.has_value(), "invalid_input", "undeclared entity type '" + e[2].get<std::string>() + "'");
    out.push_back({e[0].get<std::size_t>(), e[1].get<std::size_t>(), *type});
  }
  return out;
}

inline std::vector<Relation> parse_relations(const ordered_json& j, const TagVocabulary& v) {
  std::vector<Relation> out;
  for (const auto& r : j) {
    require(r.is_array() && r.size() == 3, "invalid_input", "relation must be [head, type, tail]");
    const auto type = v.relation_type_id(r[1].get<std::string>());
    require(type.has_value(), "invalid_input", "undeclared relation type '" + r[1].get<std::string>() + "'");
    out.push_back({r[0].get<std::size_t>(), *type, r[2].get<std::size_t>()});
  }
  return out;
}

template <typename Fn>
void for_each_line(std::istream& in, const std::string& source, Fn&& fn) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      fn(ordered_json::parse(line), lineno);
    } catch (const nlohmann::json::exception& e) {
      throw Error("invalid_input", source + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      if (e.code() == "version") throw;
      throw Error(e.code(), source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void check_header(const ordered_json& j, const char* format, const std::string& source) {
  require(j.is_object() && j.value("format", "") == format, "invalid_input",
          source + ": first line is not a " + std::string(format) + " header");
  const auto version = j.value("version", "");
  if (version != kFormatVersion)
    throw Error("version", source + ": unsupported format version '" + version + "' (expected v1)");
}

}  // namespace detail

inline void write_corpus(std::ostream& out, const Corpus& c) {
  ordered_json header = {{"format", kCorpusFormat},
                         {"version", kFormatVersion},
                         {"entity_types", c.vocab.entity_types()},
                         {"relation_types", c.vocab.relation_types()}};
  out << header.dump() << '\n';
  for (const auto& s : c.sentences) {
    ordered_json j = {{"id", s.id},
                      {"tokens", s.tokens},
                      {"entities", detail::entities_json(s.entities, c.vocab)},
                      {"relations", detail::relations_json(s.relations, c.vocab)}};
    if (s.provenance != Provenance::unknown) j["provenance"] = to_string(s.provenance);
    out << j.dump() << '\n';
  }
}

inline Corpus read_corpus(std::istream& in, const std::string& source = "<corpus>") {
  Corpus c;
  bool have_header = false;
  detail::for_each_line(in, source, [&](const ordered_json& j, std::size_t lineno) {
    if (!have_header) {
      detail::check_header(j, kCorpusFormat, source);
      c.vocab = TagVocabulary(j.at("entity_types").get<std::vector<std::string>>(),
                              j.at("relation_types").get<std::vector<std::string>>());
      have_header = true;
      return;
    }
    Sentence s;
    s.id = j.contains("id") ? j["id"].get<std::string>() : "line" + std::to_string(lineno);
    s.tokens = j.at("tokens").get<std::vector<std::string>>();
    s.entities = detail::parse_entities(j.at("entities"), c.vocab);
    s.relations = detail::parse_relations(j.value("relations", ordered_json::array()), c.vocab);
    if (j.contains("provenance")) s.provenance = provenance_from_string(j["provenance"].get<std::string>());
    validate_sentence(s, c.vocab);
    c.sentences.push_back(std::move(s));
  });
  require(have_header, "invalid_input", source + ": empty corpus file");
  return c;
}

inline void save_corpus(const Corpus& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "io", "cannot write '" + path + "'");
  write_corpus(out, c);
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "io", "cannot open corpus '" + path + "'");
  return read_corpus(in, path);
}

inline void write_provenance(std::ostream& out, const ProvenanceTable& table, const TagVocabulary& vocab) {
  out << ordered_json{{"format", kProvenanceFormat}, {"version", kFormatVersion}}.dump() << '\n';
  for (const auto& [id, p] : table) {
    auto corruptions = ordered_json::array();
    for (const auto& c : p.corruptions) {
      ordered_json cj = {{"kind", c.kind}};
      for (const auto& [k, v] : c.fields) cj[k] = v;
      corruptions.push_back(cj);
    }
    ordered_json j = {{"id", id},
                      {"status", to_string(p.status)},
                      {"corruptions", corruptions},
                      {"gold",
                       {{"entities", detail::entities_json(p.gold_entities, vocab)},
                        {"relations", detail::relations_json(p.gold_relations, vocab)}}}};
    out << j.dump() << '\n';
  }
}

inline ProvenanceTable read_provenance(std::istream& in, const TagVocabulary& vocab,
                                       const std::string& source = "<provenance>") {
  ProvenanceTable table;
  bool have_header = false;
  detail::for_each_line(in, source, [&](const ordered_json& j, std::size_t) {
    if (!have_header) {
      detail::check_header(j, kProvenanceFormat, source);
      have_header = true;
      return;
    }
    SentenceProvenance p;
    p.status = provenance_from_string(j.at("status").get<std::string>());
    for (const auto& cj : j.at("corruptions")) {
      Corruption c{cj.at("kind").get<std::string>(), {}};
      for (const auto& [k, v] : cj.items())
        if (k != "kind") c.fields[k] = v.get<std::string>();
      p.corruptions.push_back(std::move(c));
    }
    p.gold_entities = detail::parse_entities(j.at("gold").at("entities"), vocab);
    p.gold_relations = detail::parse_relations(j.at("gold").at("relations"), vocab);
    table[j.at("id").get<std::string>()] = std::move(p);
  });
  require(have_header, "invalid_input", source + ": empty provenance file");
  return table;
}

inline std::string provenance_path_for(const std::string& corpus_path) { return corpus_path + ".prov.jsonl"; }

inline void save_provenance(const ProvenanceTable& t, const TagVocabulary& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "io", "cannot write '" + path + "'");
  write_provenance(out, t, vocab);
}

/// Loads the sidecar next to `corpus_path` if one exists.
inline std::optional<ProvenanceTable> load_provenance_if_present(const std::string& corpus_path,
                                                                 const TagVocabulary& vocab) {
  const auto path = provenance_path_for(corpus_path);
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) return std::nullopt;
  return read_provenance(in, vocab, path);
}

/// Builds every instance of the corpus. With a provenance table, each
/// instance is flagged clean iff its tag sequence matches the instance the
/// uncorrupted annotation would have produced at the same query position;
/// otherwise instances inherit the sentence-level flag.
inline std::vector<Instance> build_corpus_instances(const Corpus& c, const ProvenanceTable* provenance = nullptr) {
  std::vector<Instance> out;
  for (std::size_t si = 0; si < c.sentences.size(); ++si) {
    const Sentence& s = c.sentences[si];
    auto insts = build_instances(s, c.vocab, si);
    if (provenance) {
      auto it = provenance->find(s.id);
      if (it != provenance->end()) {
        Sentence gold = s;
        gold.entities = it->second.gold_entities;
        gold.relations = it->second.gold_relations;
        for (auto& inst : insts) {
          inst.provenance = Provenance::corrupted;
          for (std::size_t e = 0; e < gold.entities.size(); ++e)
            if (gold.entities[e].start == inst.query && instance_tags(gold, e, c.vocab) == inst.tags)
              inst.provenance = Provenance::clean;
        }
      }
    }
    for (auto& i : insts) out.push_back(std::move(i));
  }
  return out;
}

}  // namespace unbed
