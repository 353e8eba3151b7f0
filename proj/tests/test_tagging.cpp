#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"
#include "unbed/tagging.hpp"

namespace unbed {
namespace {

TagVocabulary org_per_vocab() { return TagVocabulary({"ORG", "PER"}, {"founded_by", "works_for"}); }

Sentence acme_bob() {
  Sentence s;
  s.id = "s0";
  s.tokens = {"Acme", "was", "founded_by", "Bob"};
  s.entities = {{0, 1, 0}, {3, 4, 1}};
  s.relations = {{0, 0, 1}};
  return s;
}

TEST(TagVocabulary, DenseIdsWithReservedOutside) {
  const auto v = org_per_vocab();
  EXPECT_EQ(v.size(), 1u + 2 * 2 + 2 * 2);
  std::set<std::string> names;
  for (std::size_t id = 0; id < v.size(); ++id) names.insert(v.name(id));
  EXPECT_EQ(names.size(), v.size());
  EXPECT_EQ(v.name(0), "O");
  EXPECT_EQ(v.name(v.entity_begin(0)), "B-E:ORG");
  EXPECT_EQ(v.name(v.entity_inside(1)), "I-E:PER");
  EXPECT_EQ(v.name(v.relation_begin(0)), "B-R:founded_by");
  EXPECT_EQ(v.name(v.relation_inside(1)), "I-R:works_for");
  EXPECT_THROW(v.decode(v.size()), Error);
}

TEST(BuildInstances, AcmeFoundedByBob) {
  const auto v = org_per_vocab();
  const auto inst = build_instances(acme_bob(), v);
  ASSERT_EQ(inst.size(), 2u);
  EXPECT_EQ(inst[0].query, 0u);
  EXPECT_EQ(inst[0].tags, (std::vector<std::size_t>{v.entity_begin(0), 0, 0, v.relation_begin(0)}));
  EXPECT_EQ(inst[1].query, 3u);
  EXPECT_EQ(inst[1].tags, (std::vector<std::size_t>{0, 0, 0, v.entity_begin(1)}));
  EXPECT_EQ(inst[0].id, "s0:0");
  EXPECT_EQ(inst[1].id, "s0:3");
}

TEST(BuildInstances, SingleEntityWithoutRelations) {
  const auto v = org_per_vocab();
  Sentence s;
  s.id = "x";
  s.tokens = {"the", "Big", "Corp", "."};
  s.entities = {{1, 3, 0}};
  const auto inst = build_instances(s, v);
  ASSERT_EQ(inst.size(), 1u);
  EXPECT_EQ(inst[0].tags, (std::vector<std::size_t>{0, v.entity_begin(0), v.entity_inside(0), 0}));
}

TEST(BuildInstances, NoEntitiesGiveNoInstances) {
  Sentence s;
  s.tokens = {"nothing", "here"};
  EXPECT_TRUE(build_instances(s, org_per_vocab()).empty());
}

TEST(BuildInstances, RejectsInvalidSentences) {
  const auto v = org_per_vocab();
  auto overlap = acme_bob();
  overlap.entities = {{0, 2, 0}, {1, 3, 1}};
  EXPECT_THROW(build_instances(overlap, v), Error);
  auto out_of_bounds = acme_bob();
  out_of_bounds.entities[1] = {3, 5, 1};
  EXPECT_THROW(build_instances(out_of_bounds, v), Error);
  auto dangling = acme_bob();
  dangling.relations = {{0, 0, 7}};
  EXPECT_THROW(build_instances(dangling, v), Error);
  auto empty = acme_bob();
  empty.tokens.clear();
  empty.entities.clear();
  empty.relations.clear();
  EXPECT_THROW(build_instances(empty, v), Error);
  try {
    build_instances(overlap, v);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "invalid_input");
    EXPECT_NE(std::string(e.what()).find("overlapping"), std::string::npos);
  }
}

TEST(DecodeTriplets, InverseOfAcmeExample) {
  const auto v = org_per_vocab();
  const std::vector<std::size_t> tags = {v.entity_begin(0), 0, 0, v.relation_begin(0)};
  const auto t = decode_triplets(tags, v, 0);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0], (Triplet{0, 1, 0, 0, 3, 4}));
}

TEST(DecodeTriplets, AllOutsideGivesNothing) {
  const auto v = org_per_vocab();
  const std::vector<std::size_t> tags(5, 0);
  for (std::size_t p = 0; p < 5; ++p) EXPECT_TRUE(decode_triplets(tags, v, p).empty());
}

TEST(DecodeTriplets, NoEntityAtQueryGivesNothing) {
  const auto v = org_per_vocab();
  const std::vector<std::size_t> tags = {v.entity_begin(0), 0, 0, v.relation_begin(0)};
  EXPECT_TRUE(decode_triplets(tags, v, 1).empty());
  EXPECT_TRUE(decode_triplets(tags, v, 9).empty());
}

TEST(DecodeTriplets, OrphanInsideIsReadAsBegin) {
  const auto v = org_per_vocab();
  const std::vector<std::size_t> tags = {v.entity_begin(0), 0, v.relation_inside(1), v.relation_inside(1)};
  const auto t = decode_triplets(tags, v, 0);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0], (Triplet{0, 1, 0, 1, 2, 4}));
}

TEST(DecodeTriplets, QueryInsideMultiTokenEntity) {
  const auto v = org_per_vocab();
  const std::vector<std::size_t> tags = {v.entity_begin(1), v.entity_inside(1), v.relation_begin(1)};
  EXPECT_EQ(decode_triplets(tags, v, 1), (std::vector<Triplet>{{0, 2, 1, 1, 2, 3}}));
}

TEST(RepairBio, MatchesBruteForceOracleOnAllShortSequences) {
  const TagVocabulary v({"A"}, {"r"});  // C = 5
  for (std::size_t n = 1; n <= 4; ++n)
    oracle::for_each_path(n, v.size(), [&](const std::vector<std::size_t>& y) {
      const auto candidates = oracle::minimal_bio_repairs(y, v);
      ASSERT_EQ(candidates.size(), 1u);
      const auto repaired = repair_bio(y, v);
      EXPECT_EQ(repaired, candidates.front());
      for (std::size_t p = 0; p < n; ++p)
        EXPECT_EQ(decode_triplets(y, v, p), oracle::triplets_from_consistent(candidates.front(), v, p));
    });
}

TEST(DecodeTriplets, TotalOnArbitrarySequences) {
  const auto v = org_per_vocab();
  Rng rng(41);
  for (int rep = 0; rep < 2000; ++rep) {
    std::vector<std::size_t> tags(1 + rng.below(10));
    for (auto& t : tags) t = rng.below(v.size());
    const std::size_t p = rng.below(tags.size() + 2);
    std::vector<Triplet> out;
    EXPECT_NO_THROW(out = decode_triplets(tags, v, p));
    for (const auto& t : out) {
      EXPECT_LT(t.e1_start, t.e1_end);
      EXPECT_LE(t.e1_end, tags.size());
      EXPECT_LT(t.e2_start, t.e2_end);
      EXPECT_LE(t.e2_end, tags.size());
    }
  }
}

TEST(BuildInstances, RoundTripOverRandomSentences) {
  const auto v = org_per_vocab();
  Rng rng(43);
  for (int rep = 0; rep < 1000; ++rep) {
    const auto s = oracle::random_sentence(rng, v);
    const auto insts = build_instances(s, v);
    ASSERT_EQ(insts.size(), s.entities.size());
    std::set<Triplet> recovered;
    for (std::size_t i = 0; i < insts.size(); ++i) {
      const auto& inst = insts[i];
      EXPECT_EQ(inst.tags.size(), s.tokens.size());
      EXPECT_EQ(inst.query, s.entities[i].start);
      EXPECT_EQ(inst.tags[inst.query], v.entity_begin(s.entities[i].type));
      EXPECT_EQ(repair_bio(inst.tags, v), inst.tags);
      std::vector<Triplet> expected;
      for (const auto& r : s.relations)
        if (r.head == i) {
          const auto& h = s.entities[r.head];
          const auto& t = s.entities[r.tail];
          expected.push_back({h.start, h.end, h.type, r.type, t.start, t.end});
        }
      auto got = decode_triplets(inst.tags, v, inst.query);
      std::sort(expected.begin(), expected.end());
      std::sort(got.begin(), got.end());
      EXPECT_EQ(got, expected);
      recovered.insert(got.begin(), got.end());
    }
    const auto gold = gold_triplets(s);
    EXPECT_EQ(std::vector<Triplet>(recovered.begin(), recovered.end()), gold);
  }
}

TEST(InferenceQueries, EveryPosition) {
  EXPECT_EQ(enumerate_inference_queries(acme_bob()), (std::vector<std::size_t>{0, 1, 2, 3}));
}

}  // namespace
}  // namespace unbed
