// Synthetic distant-supervision corpora: template-generated sentences with
// exact annotations, and a noise injector that corrupts them the way
// KB-aligned labels go wrong (false or missing relations, wrong entity tags),
// recording every corruption.
#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unbed/corpus.hpp"

namespace unbed {

/// A relation template is a token pattern where "{head}" and "{tail}" mark
/// the entity slots, e.g. "{head} was founded by {tail}".
struct RelationTemplate {
  std::string relation;
  std::string head_type;
  std::string tail_type;
  std::vector<std::string> patterns;
};

/// A clause that introduces one extra entity unrelated to anything,
/// e.g. "in {entity}" placed before or after the main clause.
struct BystanderClause {
  std::string entity_type;
  std::string pattern;  // contains "{entity}"
  bool prefix = false;
};

struct GrammarSpec {
  std::vector<std::string> entity_types;
  std::map<std::string, std::vector<std::string>> lexicons;  // type -> names (space-separated tokens)
  std::vector<RelationTemplate> templates;
  std::vector<BystanderClause> bystanders;
  std::vector<std::string> distractors;
  double bystander_rate = 0.5;
  std::size_t max_prefix_distractors = 2;
  std::size_t max_suffix_distractors = 2;

  std::vector<std::string> relation_types() const {
    std::vector<std::string> out;
    for (const auto& t : templates)
      if (std::find(out.begin(), out.end(), t.relation) == out.end()) out.push_back(t.relation);
    return out;
  }

  TagVocabulary vocabulary() const { return TagVocabulary(entity_types, relation_types()); }

  void validate() const {
    require(!entity_types.empty(), "invalid_input", "grammar declares no entity types");
    require(!templates.empty(), "invalid_input", "grammar declares no relation templates");
    auto declared = [&](const std::string& t) {
      return std::find(entity_types.begin(), entity_types.end(), t) != entity_types.end();
    };
    for (const auto& t : entity_types) {
      auto it = lexicons.find(t);
      require(it != lexicons.end() && !it->second.empty(), "invalid_input", "empty lexicon for type '" + t + "'");
    }
    for (const auto& t : templates) {
      require(declared(t.head_type) && declared(t.tail_type), "invalid_input",
              "template for '" + t.relation + "' references an undeclared entity type");
      require(!t.patterns.empty(), "invalid_input", "template for '" + t.relation + "' has no patterns");
      for (const auto& p : t.patterns)
        require(p.find("{head}") != std::string::npos && p.find("{tail}") != std::string::npos, "invalid_input",
                "pattern '" + p + "' lacks a {head} or {tail} slot");
    }
    for (const auto& b : bystanders) {
      require(declared(b.entity_type), "invalid_input", "bystander clause references an undeclared type");
      require(b.pattern.find("{entity}") != std::string::npos, "invalid_input", "bystander pattern lacks {entity}");
    }
  }
};

/// Three entity types, four relation types.
inline GrammarSpec default_grammar() {
  GrammarSpec g;
  g.entity_types = {"PER", "ORG", "LOC"};
  g.lexicons["PER"] = {"John Smith", "Maria Garcia", "Wei Chen", "Amara Okafor", "Liam Murphy", "Sofia Rossi",
                       "Kenji Tanaka", "Olga Petrova", "Rahul Mehta", "Fatima Zahra", "Lucas Silva", "Hannah Berg",
                       "Diego Luna", "Aiko Mori", "Noah Levi", "Elena Popescu", "Omar Haddad", "Grace Kim",
                       "Pieter Janssen", "Nadia Ivanova", "Carlos Mendes", "Ingrid Holm", "Tomas Novak", "Leila Amini",
                       "Brennan", "Okonkwo", "Vasquez", "Lindqvist"};
  g.lexicons["ORG"] = {"Acme Corp", "Globex", "Initech", "Umbrella Group", "Stark Industries", "Wayne Enterprises",
                       "Hooli", "Vandelay Imports", "Soylent Company", "Tyrell Corporation", "Cyberdyne Systems",
                       "Wonka Industries", "Oscorp", "Massive Dynamic", "Aperture Labs", "Black Mesa",
                       "Gringotts Bank", "Monarch Solutions", "Pied Piper", "Nakatomi Trading", "Blue Sun",
                       "Virtucon", "Rekall", "Zorin Industries"};
  g.lexicons["LOC"] = {"Paris", "New York", "Lagos", "Tokyo", "Berlin", "Sao Paulo", "Mumbai", "Cairo", "Toronto",
                       "Sydney", "Buenos Aires", "Oslo", "Nairobi", "Seoul", "Lisbon", "Warsaw", "Hanoi", "Lima",
                       "Cape Town", "Dublin", "Kyoto", "Istanbul", "Vienna", "Santiago"};
  g.templates = {
      {"founded_by", "ORG", "PER",
       {"{head} was founded by {tail}", "{tail} founded {head}", "{tail} , the founder of {head} ,",
        "{head} , started by {tail} ,"}},
      {"born_in", "PER", "LOC",
       {"{head} was born in {tail}", "{tail} is the birthplace of {head}", "{head} , a native of {tail} ,",
        "born in {tail} , {head}"}},
      {"works_for", "PER", "ORG",
       {"{head} works for {tail}", "{head} , an employee of {tail} ,", "{tail} hired {head}",
        "{head} joined {tail} as an engineer"}},
      {"located_in", "ORG", "LOC",
       {"{head} is headquartered in {tail}", "{head} , based in {tail} ,", "{tail} hosts the offices of {head}",
        "the {tail} branch of {head}"}},
  };
  g.bystanders = {{"LOC", "in {entity}", false},         {"LOC", "yesterday in {entity} ,", true},
                  {"PER", "according to {entity}", false}, {"PER", "{entity} said that", true},
                  {"ORG", "as reported by {entity}", false}, {"ORG", "during a {entity} event ,", true}};
  g.distractors = {"today", "reportedly", "officially", "again", "recently", "also", "indeed", "meanwhile",
                   "finally", "now", "however", "still"};
  return g;
}

inline GrammarSpec grammar_from_json(const nlohmann::json& j) {
  GrammarSpec g;
  g.entity_types = j.at("entity_types").get<std::vector<std::string>>();
  g.lexicons = j.at("lexicons").get<std::map<std::string, std::vector<std::string>>>();
  for (const auto& t : j.at("templates"))
    g.templates.push_back({t.at("relation").get<std::string>(), t.at("head_type").get<std::string>(),
                           t.at("tail_type").get<std::string>(), t.at("patterns").get<std::vector<std::string>>()});
  for (const auto& b : j.value("bystanders", nlohmann::json::array()))
    g.bystanders.push_back(
        {b.at("entity_type").get<std::string>(), b.at("pattern").get<std::string>(), b.value("prefix", false)});
  g.distractors = j.value("distractors", std::vector<std::string>{});
  g.bystander_rate = j.value("bystander_rate", g.bystander_rate);
  g.max_prefix_distractors = j.value("max_prefix_distractors", g.max_prefix_distractors);
  g.max_suffix_distractors = j.value("max_suffix_distractors", g.max_suffix_distractors);
  g.validate();
  return g;
}

inline nlohmann::json grammar_to_json(const GrammarSpec& g) {
  nlohmann::json j;
  j["entity_types"] = g.entity_types;
  j["lexicons"] = g.lexicons;
  j["templates"] = nlohmann::json::array();
  for (const auto& t : g.templates)
    j["templates"].push_back(
        {{"relation", t.relation}, {"head_type", t.head_type}, {"tail_type", t.tail_type}, {"patterns", t.patterns}});
  j["bystanders"] = nlohmann::json::array();
  for (const auto& b : g.bystanders)
    j["bystanders"].push_back({{"entity_type", b.entity_type}, {"pattern", b.pattern}, {"prefix", b.prefix}});
  j["distractors"] = g.distractors;
  j["bystander_rate"] = g.bystander_rate;
  j["max_prefix_distractors"] = g.max_prefix_distractors;
  j["max_suffix_distractors"] = g.max_suffix_distractors;
  return j;
}

inline GrammarSpec load_grammar(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "io", "cannot open grammar '" + path + "'");
  try {
    return grammar_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid_input", path + ": " + e.what());
  }
}

namespace detail {

inline std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

/// Appends `pattern` to `tokens`, substituting slots with entity names and
/// recording their spans.
inline void emit_pattern(const std::string& pattern, const std::map<std::string, std::string>& fills,
                         std::vector<std::string>& tokens, std::map<std::string, std::pair<std::size_t, std::size_t>>& spans) {
  for (const auto& w : split_ws(pattern)) {
    auto it = fills.find(w);
    if (it == fills.end()) {
      tokens.push_back(w);
      continue;
    }
    const std::size_t start = tokens.size();
    for (auto& t : split_ws(it->second)) tokens.push_back(t);
    spans[w] = {start, tokens.size()};
  }
}

}  // namespace detail

/// Deterministic in (grammar, size, seed); sentence i depends only on the
/// seed and i. Each sentence holds one relation and optionally one
/// unrelated bystander entity.
inline Corpus generate_corpus(const GrammarSpec& grammar, std::size_t size, std::uint64_t seed,
                              const std::string& id_prefix = "s") {
  grammar.validate();
  Corpus corpus{grammar.vocabulary(), {}};
  corpus.sentences.reserve(size);
  const auto& vocab = corpus.vocab;
  for (std::size_t i = 0; i < size; ++i) {
    Rng rng(derive_seed(seed, 0x67656eULL, i));
    const auto& tpl = grammar.templates[rng.below(grammar.templates.size())];
    const auto& pattern = tpl.patterns[rng.below(tpl.patterns.size())];
    const auto& heads = grammar.lexicons.at(tpl.head_type);
    const auto& tails = grammar.lexicons.at(tpl.tail_type);
    std::string head = heads[rng.below(heads.size())];
    std::string tail = tails[rng.below(tails.size())];
    while (tail == head) tail = tails[rng.below(tails.size())];

    const BystanderClause* by = nullptr;
    std::string by_name;
    if (!grammar.bystanders.empty() && rng.bernoulli(grammar.bystander_rate)) {
      by = &grammar.bystanders[rng.below(grammar.bystanders.size())];
      const auto& lex = grammar.lexicons.at(by->entity_type);
      do by_name = lex[rng.below(lex.size())];
      while (by_name == head || by_name == tail);
    }

    Sentence s;
    s.id = id_prefix + std::to_string(i);
    std::map<std::string, std::pair<std::size_t, std::size_t>> spans;
    auto distract = [&](std::size_t max) {
      if (grammar.distractors.empty()) return;
      const std::size_t k = rng.below(max + 1);
      for (std::size_t j = 0; j < k; ++j) s.tokens.push_back(grammar.distractors[rng.below(grammar.distractors.size())]);
    };
    distract(grammar.max_prefix_distractors);
    if (by && by->prefix) detail::emit_pattern(by->pattern, {{"{entity}", by_name}}, s.tokens, spans);
    detail::emit_pattern(pattern, {{"{head}", head}, {"{tail}", tail}}, s.tokens, spans);
    if (by && !by->prefix) detail::emit_pattern(by->pattern, {{"{entity}", by_name}}, s.tokens, spans);
    distract(grammar.max_suffix_distractors);
    s.tokens.push_back(".");

    auto add_entity = [&](const std::string& slot, const std::string& type) {
      const auto [a, b] = spans.at(slot);
      s.entities.push_back({a, b, *vocab.entity_type_id(type)});
      return s.entities.size() - 1;
    };
    // Entities are listed in token order.
    std::vector<std::pair<std::size_t, std::pair<std::string, std::string>>> slots = {
        {spans.at("{head}").first, {"{head}", tpl.head_type}}, {spans.at("{tail}").first, {"{tail}", tpl.tail_type}}};
    if (by) slots.push_back({spans.at("{entity}").first, {"{entity}", by->entity_type}});
    std::sort(slots.begin(), slots.end());
    std::map<std::string, std::size_t> index;
    for (const auto& [pos, st] : slots) index[st.first] = add_entity(st.first, st.second);
    s.relations.push_back({index.at("{head}"), *vocab.relation_type_id(tpl.relation), index.at("{tail}")});
    s.provenance = Provenance::clean;
    validate_sentence(s, vocab);
    corpus.sentences.push_back(std::move(s));
  }
  return corpus;
}

/// Relation-type counts of a corpus, by name.
inline std::map<std::string, std::size_t> relation_histogram(const Corpus& c) {
  std::map<std::string, std::size_t> h;
  for (const auto& s : c.sentences)
    for (const auto& r : s.relations) ++h[c.vocab.relation_types()[r.type]];
  return h;
}

struct NoiseSpec {
  double relation_rate = 0.0;  // per gold relation
  double entity_rate = 0.0;    // per gold entity
  std::uint64_t seed = 0;
  // Mix of relation corruption modes (normalized internally).
  double flip_weight = 0.6;
  double hallucinate_weight = 0.25;
  double drop_weight = 0.15;
};

struct NoisyCorpus {
  Corpus corpus;
  ProvenanceTable provenance;
};

namespace detail {

inline bool span_fits(const Sentence& s, std::size_t self, std::size_t start, std::size_t end) {
  if (start >= end || end > s.tokens.size()) return false;
  for (std::size_t e = 0; e < s.entities.size(); ++e) {
    if (e == self) continue;
    const auto& o = s.entities[e];
    if (start < o.end && o.start < end) return false;
  }
  return true;
}

}  // namespace detail

/// Corrupts each relation with probability relation_rate (type flip to a
/// different type, hallucination onto an unrelated co-occurring pair, or
/// drop) and each entity with probability entity_rate (type flip or a +-1
/// boundary shift). Sentence i's corruption depends only on (seed, i).
inline NoisyCorpus inject_noise(const Corpus& clean, const NoiseSpec& noise) {
  require(noise.relation_rate >= 0.0 && noise.relation_rate <= 1.0 && noise.entity_rate >= 0.0 &&
              noise.entity_rate <= 1.0,
          "invalid_input", "noise rates must lie in [0, 1]");
  const double wsum = noise.flip_weight + noise.hallucinate_weight + noise.drop_weight;
  require(wsum > 0.0, "invalid_input", "relation corruption weights must not all be zero");
  const std::size_t num_rel = clean.vocab.relation_types().size();
  const std::size_t num_ent = clean.vocab.entity_types().size();

  NoisyCorpus out{clean, {}};
  for (std::size_t i = 0; i < out.corpus.sentences.size(); ++i) {
    Sentence& s = out.corpus.sentences[i];
    SentenceProvenance prov;
    prov.gold_entities = s.entities;
    prov.gold_relations = s.relations;
    Rng rng(derive_seed(noise.seed, 0x6e6f6973ULL, i));

    std::vector<Relation> kept;
    for (std::size_t r = 0; r < s.relations.size(); ++r) {
      Relation rel = s.relations[r];
      if (!rng.bernoulli(noise.relation_rate)) {
        kept.push_back(rel);
        continue;
      }
      const double u = rng.uniform() * wsum;
      std::string mode = u < noise.flip_weight                             ? "relation_flip"
                         : u < noise.flip_weight + noise.hallucinate_weight ? "relation_hallucination"
                                                                            : "relation_drop";
      // Unrelated ordered pairs available for a hallucinated relation.
      std::vector<std::pair<std::size_t, std::size_t>> free_pairs;
      for (std::size_t h = 0; h < s.entities.size(); ++h)
        for (std::size_t t = 0; t < s.entities.size(); ++t) {
          if (h == t) continue;
          bool taken = false;
          for (const auto& o : s.relations) taken = taken || (o.head == h && o.tail == t);
          if (!taken) free_pairs.emplace_back(h, t);
        }
      if (mode == "relation_hallucination" && free_pairs.empty()) mode = "relation_flip";
      if (mode == "relation_flip" && num_rel < 2) mode = "relation_drop";

      Corruption c{mode, {{"relation", std::to_string(r)}}};
      const auto& names = clean.vocab.relation_types();
      if (mode == "relation_flip") {
        std::size_t to = rng.below(num_rel - 1);
        if (to >= rel.type) ++to;
        c.fields["from"] = names[rel.type];
        c.fields["to"] = names[to];
        rel.type = to;
        kept.push_back(rel);
      } else if (mode == "relation_hallucination") {
        const auto [h, t] = free_pairs[rng.below(free_pairs.size())];
        c.fields["from_pair"] = std::to_string(rel.head) + "->" + std::to_string(rel.tail);
        c.fields["to_pair"] = std::to_string(h) + "->" + std::to_string(t);
        c.fields["type"] = names[rel.type];
        kept.push_back({h, rel.type, t});
      } else {
        c.fields["type"] = names[rel.type];
      }
      prov.corruptions.push_back(std::move(c));
    }
    s.relations = std::move(kept);

    for (std::size_t e = 0; e < s.entities.size(); ++e) {
      if (!rng.bernoulli(noise.entity_rate)) continue;
      EntitySpan& ent = s.entities[e];
      bool shifted = false;
      if (rng.bernoulli(0.5)) {
        std::vector<std::pair<std::size_t, std::size_t>> shifts;
        for (int ds : {-1, 1})
          for (int side : {0, 1}) {
            const long start = static_cast<long>(ent.start) + (side == 0 ? ds : 0);
            const long end = static_cast<long>(ent.end) + (side == 1 ? ds : 0);
            if (start < 0) continue;
            if (detail::span_fits(s, e, static_cast<std::size_t>(start), static_cast<std::size_t>(end)))
              shifts.emplace_back(static_cast<std::size_t>(start), static_cast<std::size_t>(end));
          }
        if (!shifts.empty()) {
          const auto [a, b] = shifts[rng.below(shifts.size())];
          prov.corruptions.push_back({"entity_shift",
                                      {{"entity", std::to_string(e)},
                                       {"from", std::to_string(ent.start) + "," + std::to_string(ent.end)},
                                       {"to", std::to_string(a) + "," + std::to_string(b)}}});
          ent.start = a;
          ent.end = b;
          shifted = true;
        }
      }
      if (!shifted && num_ent >= 2) {
        std::size_t to = rng.below(num_ent - 1);
        if (to >= ent.type) ++to;
        prov.corruptions.push_back({"entity_type_flip",
                                    {{"entity", std::to_string(e)},
                                     {"from", clean.vocab.entity_types()[ent.type]},
                                     {"to", clean.vocab.entity_types()[to]}}});
        ent.type = to;
      }
    }

    prov.status = prov.corruptions.empty() ? Provenance::clean : Provenance::corrupted;
    s.provenance = prov.status;
    validate_sentence(s, out.corpus.vocab);
    out.provenance[s.id] = std::move(prov);
  }
  return out;
}

}  // namespace unbed
