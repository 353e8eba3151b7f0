// Small synthetic datasets shared by the training tests and the acceptance
// gate.
#pragma once

#include "unbed/bootstrap.hpp"
#include "unbed/datagen.hpp"

namespace unbed::fixture {

struct Dataset {
  Corpus train;
  ProvenanceTable provenance;
  std::vector<Instance> instances;
  std::vector<Example> examples;
  std::vector<Provenance> flags;
  std::vector<Sentence> validation;
  std::vector<Sentence> test;
  TokenVocabulary tokens;
};

/// Noisy training corpus of `train_size` sentences plus a clean corpus of
/// `heldout_size` sentences split into validation and test halves.
inline Dataset make_dataset(std::size_t train_size, std::size_t heldout_size, double relation_rate,
                            double entity_rate, std::uint64_t seed) {
  const auto grammar = default_grammar();
  Dataset d;
  auto noisy = inject_noise(generate_corpus(grammar, train_size, seed, "tr"), {relation_rate, entity_rate, seed + 1});
  d.train = std::move(noisy.corpus);
  d.provenance = std::move(noisy.provenance);
  d.instances = build_corpus_instances(d.train, &d.provenance);
  d.tokens = training_vocabulary(d.instances);
  d.examples = to_examples(d.instances, d.tokens);
  for (const auto& i : d.instances) d.flags.push_back(i.provenance);
  if (heldout_size > 0) {
    const auto held = generate_corpus(grammar, heldout_size, seed + 2, "te");
    auto [val, test] = split_validation(held.sentences, 0.5, seed + 3);
    d.validation = std::move(val);
    d.test = std::move(test);
  }
  return d;
}

}  // namespace unbed::fixture
