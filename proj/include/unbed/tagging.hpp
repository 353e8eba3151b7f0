// Query-position tagging scheme for joint entity/relation extraction.
//
// A sentence with n tokens yields one instance per gold entity. In the
// instance anchored at query position p (the start of the query entity e1):
//   - e1's span carries B-E:t / I-E:t with its entity type t,
//   - each entity e2 that e1 relates to carries B-R:r / I-R:r with the
//     relation type r,
//   - every other token is O.
// Relations are directed: the tail does not get the inverse relation in its
// own instance.
#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "unbed/core.hpp"

namespace unbed {

struct EntitySpan {
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // exclusive
  std::size_t type = 0;
  auto operator<=>(const EntitySpan&) const = default;
};

struct Relation {
  std::size_t head = 0;  // index into Sentence::entities
  std::size_t type = 0;
  std::size_t tail = 0;
  auto operator<=>(const Relation&) const = default;
};

enum class Provenance : std::uint8_t { unknown, clean, corrupted };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::clean: return "clean";
    case Provenance::corrupted: return "corrupted";
    default: return "unknown";
  }
}

inline Provenance provenance_from_string(std::string_view s) {
  if (s == "clean") return Provenance::clean;
  if (s == "corrupted") return Provenance::corrupted;
  if (s == "unknown") return Provenance::unknown;
  throw Error("invalid_input", "unknown provenance '" + std::string(s) + "'");
}

struct Sentence {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<EntitySpan> entities;
  std::vector<Relation> relations;
  Provenance provenance = Provenance::unknown;

  bool operator==(const Sentence&) const = default;
};

/// Dense tag ids: O = 0, then (B-E:t, I-E:t) pairs per entity type, then
/// (B-R:r, I-R:r) pairs per relation type.
class TagVocabulary {
 public:
  enum class Kind : std::uint8_t { outside, entity, relation };
  struct Tag {
    Kind kind = Kind::outside;
    bool begin = false;
    std::size_t label = 0;  // entity-type or relation-type id
  };

  static constexpr std::size_t kOutside = 0;

  TagVocabulary() = default;
  TagVocabulary(std::vector<std::string> entity_types, std::vector<std::string> relation_types)
      : entity_types_(std::move(entity_types)), relation_types_(std::move(relation_types)) {
    require(!entity_types_.empty(), "invalid_input", "tag vocabulary needs at least one entity type");
  }

  std::size_t size() const noexcept { return 1 + 2 * entity_types_.size() + 2 * relation_types_.size(); }
  const std::vector<std::string>& entity_types() const noexcept { return entity_types_; }
  const std::vector<std::string>& relation_types() const noexcept { return relation_types_; }

  std::size_t entity_begin(std::size_t t) const { return 1 + 2 * t; }
  std::size_t entity_inside(std::size_t t) const { return 2 + 2 * t; }
  std::size_t relation_begin(std::size_t r) const { return 1 + 2 * entity_types_.size() + 2 * r; }
  std::size_t relation_inside(std::size_t r) const { return relation_begin(r) + 1; }

  Tag decode(std::size_t id) const {
    require(id < size(), "invalid_input", "tag id out of range: " + std::to_string(id));
    if (id == kOutside) return {};
    const std::size_t k = id - 1;
    const std::size_t ne = 2 * entity_types_.size();
    if (k < ne) return {Kind::entity, k % 2 == 0, k / 2};
    return {Kind::relation, (k - ne) % 2 == 0, (k - ne) / 2};
  }

  std::string name(std::size_t id) const {
    const Tag t = decode(id);
    switch (t.kind) {
      case Kind::outside: return "O";
      case Kind::entity: return std::string(t.begin ? "B" : "I") + "-E:" + entity_types_[t.label];
      case Kind::relation: return std::string(t.begin ? "B" : "I") + "-R:" + relation_types_[t.label];
    }
    return "O";
  }

  std::optional<std::size_t> entity_type_id(std::string_view name) const { return find(entity_types_, name); }
  std::optional<std::size_t> relation_type_id(std::string_view name) const { return find(relation_types_, name); }

  std::uint64_t fingerprint() const {
    std::uint64_t h = fnv1a("tags");
    for (const auto& e : entity_types_) h = fnv1a(e + "\x1f", h);
    h = fnv1a("\x1e", h);
    for (const auto& r : relation_types_) h = fnv1a(r + "\x1f", h);
    return h;
  }

  bool operator==(const TagVocabulary&) const = default;

 private:
  static std::optional<std::size_t> find(const std::vector<std::string>& v, std::string_view name) {
    auto it = std::find(v.begin(), v.end(), name);
    if (it == v.end()) return std::nullopt;
    return static_cast<std::size_t>(it - v.begin());
  }

  std::vector<std::string> entity_types_;
  std::vector<std::string> relation_types_;
};

/// One (sentence, query position) tagging instance.
/// `provenance` exists for evaluation only; training consumes Examples
/// (see model.hpp), which do not carry it.
struct Instance {
  std::string id;
  std::size_t sentence_index = 0;
  std::vector<std::string> tokens;
  std::size_t query = 0;
  std::vector<std::size_t> tags;
  Provenance provenance = Provenance::unknown;
};

struct Triplet {
  std::size_t e1_start = 0, e1_end = 0, e1_type = 0;
  std::size_t relation = 0;
  std::size_t e2_start = 0, e2_end = 0;
  auto operator<=>(const Triplet&) const = default;
};

/// Throws Error("invalid_input") when the sentence breaks an invariant.
inline void validate_sentence(const Sentence& s, const TagVocabulary& vocab) {
  const std::string where = "sentence '" + s.id + "': ";
  require(!s.tokens.empty(), "invalid_input", where + "no tokens");
  std::vector<std::size_t> order(s.entities.size());
  std::iota(order.begin(), order.end(), 0);
  for (const auto& e : s.entities) {
    require(e.start < e.end && e.end <= s.tokens.size(), "invalid_input",
            where + "entity span [" + std::to_string(e.start) + "," + std::to_string(e.end) + ") out of bounds");
    require(e.type < vocab.entity_types().size(), "invalid_input", where + "entity type out of range");
  }
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return s.entities[a].start < s.entities[b].start; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    const auto& prev = s.entities[order[i - 1]];
    const auto& cur = s.entities[order[i]];
    require(prev.end <= cur.start, "invalid_input",
            where + "overlapping entity spans at token " + std::to_string(cur.start));
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& r : s.relations) {
    require(r.head < s.entities.size() && r.tail < s.entities.size(), "invalid_input",
            where + "relation references a missing entity");
    require(r.head != r.tail, "invalid_input", where + "self relation");
    require(r.type < vocab.relation_types().size(), "invalid_input", where + "relation type out of range");
    pairs.emplace_back(r.head, r.tail);
  }
  std::sort(pairs.begin(), pairs.end());
  require(std::adjacent_find(pairs.begin(), pairs.end()) == pairs.end(), "invalid_input",
          where + "two relations share one (head, tail) pair");
}

inline std::string instance_id(const Sentence& s, std::size_t query) {
  return s.id + ":" + std::to_string(query);
}

/// Tag sequence of the instance anchored at entity `head`.
inline std::vector<std::size_t> instance_tags(const Sentence& s, std::size_t head, const TagVocabulary& vocab) {
  std::vector<std::size_t> tags(s.tokens.size(), TagVocabulary::kOutside);
  const auto& q = s.entities[head];
  for (std::size_t t = q.start; t < q.end; ++t)
    tags[t] = t == q.start ? vocab.entity_begin(q.type) : vocab.entity_inside(q.type);
  for (const auto& r : s.relations) {
    if (r.head != head) continue;
    const auto& e2 = s.entities[r.tail];
    for (std::size_t t = e2.start; t < e2.end; ++t)
      tags[t] = t == e2.start ? vocab.relation_begin(r.type) : vocab.relation_inside(r.type);
  }
  return tags;
}

/// One instance per gold entity, in entity order.
inline std::vector<Instance> build_instances(const Sentence& s, const TagVocabulary& vocab,
                                             std::size_t sentence_index = 0) {
  validate_sentence(s, vocab);
  std::vector<Instance> out;
  out.reserve(s.entities.size());
  for (std::size_t i = 0; i < s.entities.size(); ++i) {
    Instance inst;
    inst.query = s.entities[i].start;
    inst.id = instance_id(s, inst.query);
    inst.sentence_index = sentence_index;
    inst.tokens = s.tokens;
    inst.tags = instance_tags(s, i, vocab);
    inst.provenance = s.provenance;
    out.push_back(std::move(inst));
  }
  return out;
}

/// Rewrites every orphan I-X (not preceded by B-X or I-X of the same label)
/// as B-X. The result is BIO-consistent.
inline std::vector<std::size_t> repair_bio(std::vector<std::size_t> tags, const TagVocabulary& vocab) {
  for (std::size_t t = 0; t < tags.size(); ++t) {
    const auto tag = vocab.decode(tags[t]);
    if (tag.kind == TagVocabulary::Kind::outside || tag.begin) continue;
    bool continues = false;
    if (t > 0) {
      const auto prev = vocab.decode(tags[t - 1]);
      continues = prev.kind == tag.kind && prev.label == tag.label;
    }
    if (!continues)
      tags[t] = tag.kind == TagVocabulary::Kind::entity ? vocab.entity_begin(tag.label)
                                                        : vocab.relation_begin(tag.label);
  }
  return tags;
}

/// Recovers {e1, re, e2} triplets from one instance's tags. Total on any tag
/// sequence whose ids are in range.
inline std::vector<Triplet> decode_triplets(std::span<const std::size_t> raw, const TagVocabulary& vocab,
                                            std::size_t query) {
  if (query >= raw.size()) return {};
  const auto tags = repair_bio(std::vector<std::size_t>(raw.begin(), raw.end()), vocab);

  struct Span {
    TagVocabulary::Kind kind;
    std::size_t label, start, end;
  };
  std::vector<Span> spans;
  for (std::size_t t = 0; t < tags.size(); ++t) {
    const auto tag = vocab.decode(tags[t]);
    if (tag.kind == TagVocabulary::Kind::outside) continue;
    if (tag.begin)
      spans.push_back({tag.kind, tag.label, t, t + 1});
    else
      spans.back().end = t + 1;  // repair guarantees an open span of the same label
  }

  const Span* e1 = nullptr;
  for (const auto& s : spans)
    if (s.kind == TagVocabulary::Kind::entity && s.start <= query && query < s.end) e1 = &s;
  if (e1 == nullptr) return {};

  std::vector<Triplet> out;
  for (const auto& s : spans) {
    if (s.kind != TagVocabulary::Kind::relation) continue;
    out.push_back({e1->start, e1->end, e1->label, s.label, s.start, s.end});
  }
  return out;
}

/// Gold triplets of a sentence.
inline std::vector<Triplet> gold_triplets(const Sentence& s) {
  std::vector<Triplet> out;
  for (const auto& r : s.relations) {
    const auto& h = s.entities[r.head];
    const auto& t = s.entities[r.tail];
    out.push_back({h.start, h.end, h.type, r.type, t.start, t.end});
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Every token position is queried at inference time; callers dedupe the
/// resulting triplets.
inline std::vector<std::size_t> enumerate_inference_queries(const Sentence& s) {
  std::vector<std::size_t> q(s.tokens.size());
  std::iota(q.begin(), q.end(), 0);
  return q;
}

}  // namespace unbed
