#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "fixtures.hpp"
#include "unbed/checkpoint.hpp"
#include "unbed/report.hpp"

namespace unbed {
namespace {

Triplet tri(std::size_t a, std::size_t r, std::size_t b) { return {a, a + 1, 0, r, b, b + 1}; }

TEST(MatchTriplets, ExactGoldGivesPerfectScores) {
  const std::vector<Triplet> gold = {tri(0, 0, 3), tri(2, 1, 5)};
  const auto c = match_triplets(gold, gold);
  EXPECT_EQ(c.precision(), 1.0);
  EXPECT_EQ(c.recall(), 1.0);
  EXPECT_EQ(c.f1(), 1.0);
}

TEST(MatchTriplets, EmptyPredictionsScoreZero) {
  const auto c = match_triplets({}, {tri(0, 0, 3)});
  EXPECT_EQ(c.precision(), 0.0);
  EXPECT_EQ(c.recall(), 0.0);
  EXPECT_EQ(c.f1(), 0.0);
}

TEST(MatchTriplets, ThreePredictedFourGoldTwoCorrect) {
  const std::vector<Triplet> pred = {tri(0, 0, 3), tri(1, 0, 4), tri(9, 1, 2)};
  const std::vector<Triplet> gold = {tri(0, 0, 3), tri(1, 0, 4), tri(5, 0, 6), tri(7, 1, 8)};
  const auto c = match_triplets(pred, gold);
  EXPECT_EQ(c, (Counts{3, 4, 2}));
  const double p = 2.0 / 3.0, r = 1.0 / 2.0;
  EXPECT_DOUBLE_EQ(c.precision(), p);
  EXPECT_DOUBLE_EQ(c.recall(), r);
  EXPECT_DOUBLE_EQ(c.f1(), 2.0 * p * r / (p + r));
  EXPECT_DOUBLE_EQ(c.f1(), 4.0 / 7.0);
}

TEST(MatchTriplets, DuplicatesCountOnceAndTypesMustMatch) {
  EXPECT_EQ(match_triplets({tri(0, 0, 3), tri(0, 0, 3)}, {tri(0, 0, 3)}), (Counts{1, 1, 1}));
  Triplet wrong_type = tri(0, 0, 3);
  wrong_type.e1_type = 1;
  EXPECT_EQ(match_triplets({wrong_type}, {tri(0, 0, 3)}).correct, 0u);
  EXPECT_EQ(match_triplets({tri(0, 1, 3)}, {tri(0, 0, 3)}).correct, 0u);
}

TEST(Evaluate, SilentModelHasZeroRecallAndPrecision) {
  const auto d = fixture::make_dataset(20, 20, 0.0, 0.0, 1);
  JointModel m(d.tokens, d.train.vocab, 4, 1);
  m.params().projection_bias(0, TagVocabulary::kOutside) = 50.0;
  const auto r = evaluate(m, d.validation);
  EXPECT_EQ(r.counts.predicted, 0u);
  EXPECT_GT(r.counts.gold, 0u);
  EXPECT_EQ(r.precision, 0.0);
  EXPECT_EQ(r.recall, 0.0);
  EXPECT_EQ(r.f1, 0.0);
  std::size_t gold = 0;
  for (const auto& [name, c] : r.per_relation) gold += c.gold;
  EXPECT_EQ(gold, r.counts.gold);
}

TEST(SplitValidation, DisjointCoveringAndSeeded) {
  const auto c = generate_corpus(default_grammar(), 101, 3);
  const auto [val, test] = split_validation(c.sentences, 0.3, 7);
  EXPECT_EQ(val.size(), 30u);
  EXPECT_EQ(val.size() + test.size(), 101u);
  std::set<std::string> ids;
  for (const auto& s : val) ids.insert(s.id);
  for (const auto& s : test) EXPECT_TRUE(ids.insert(s.id).second);
  EXPECT_EQ(ids.size(), 101u);
  EXPECT_EQ(split_validation(c.sentences, 0.3, 7).first, val);
  EXPECT_NE(split_validation(c.sentences, 0.3, 8).first, val);
  EXPECT_THROW(split_validation(c.sentences, 1.0, 7), Error);
}

TEST(SelectionAudit, EnrichmentAgainstDatasetCleanFraction) {
  SelectionState st;
  st.dataset_size = 4;
  st.history.push_back({0, 2, 0.0, 0.0, false, {0, 1}});
  st.history.push_back({1, 3, 0.0, 0.0, false, {0, 2, 3}});
  const std::vector<Provenance> flags = {Provenance::clean, Provenance::clean, Provenance::corrupted,
                                         Provenance::corrupted};
  const auto rows = selection_audit(st, flags);
  ASSERT_TRUE(rows.has_value());
  ASSERT_EQ(rows->size(), 2u);
  EXPECT_DOUBLE_EQ((*rows)[0].clean_fraction_dataset, 0.5);
  EXPECT_DOUBLE_EQ((*rows)[0].clean_fraction_selected, 1.0);
  EXPECT_DOUBLE_EQ((*rows)[0].enrichment, 2.0);
  EXPECT_DOUBLE_EQ((*rows)[1].enrichment, (1.0 / 3.0) / 0.5);
}

TEST(SelectionAudit, UnavailableWithoutProvenance) {
  SelectionState st;
  st.dataset_size = 2;
  st.history.push_back({0, 1, 0.0, 0.0, false, {0}});
  EXPECT_FALSE(selection_audit(st, {Provenance::clean, Provenance::unknown}).has_value());
  EXPECT_FALSE(selection_audit(st, {}).has_value());
}

TEST(Checkpoint, RoundTripPreservesEvaluationExactly) {
  const auto d = fixture::make_dataset(80, 40, 0.3, 0.1, 2);
  TrainConfig cfg;
  cfg.width = 6;
  cfg.max_epochs = 2;
  const auto trained = train_baseline(d.tokens, d.train.vocab, d.examples, d.validation, cfg).last;
  const auto path = (std::filesystem::temp_directory_path() / "unbed_ckpt_test.json").string();
  save_checkpoint(trained, path, cfg.fingerprint());
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.params(), trained.params());
  EXPECT_EQ(back.fingerprint(), trained.fingerprint());
  EXPECT_EQ(evaluate(back, d.test), evaluate(trained, d.test));
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptionIsDetected) {
  const std::vector<std::string> toks = {"a"};
  const JointModel m(TokenVocabulary::from_tokens(toks), TagVocabulary({"X"}, {"r"}), 2, 1);
  auto j = checkpoint_json(m);
  auto bad_shape = j;
  bad_shape["tensors"]["crf.transitions"]["shape"] = {4, 4};
  EXPECT_THROW(model_from_checkpoint(bad_shape), Error);
  auto bad_vocab = j;
  bad_vocab["tokens"] = {"<oov>", "b"};
  EXPECT_THROW(model_from_checkpoint(bad_vocab), Error);
  auto missing = j;
  missing["tensors"].erase("encoder.offsets");
  EXPECT_THROW(model_from_checkpoint(missing), Error);
  EXPECT_NO_THROW(model_from_checkpoint(j));
}

TEST(Report, ScoresCsvHasFixedColumns) {
  std::ostringstream out;
  write_scores_csv(out, {{"s0:0", UncertaintyKind::pv, 0.5, 0.125}}, {{"s0:0", Provenance::corrupted}});
  EXPECT_EQ(out.str(), "instance_id,kind,raw,normalized,provenance\ns0:0,pv,0.125,0.5,corrupted\n");
}

}  // namespace
}  // namespace unbed
