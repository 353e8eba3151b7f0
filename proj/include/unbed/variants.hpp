// Named training variants: the baseline and the four bootstrap variants
// (data-uncertainty kind x with or without the ensemble loss).
#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "unbed/bootstrap.hpp"

namespace unbed {

enum class Variant { baseline, ws_pv, entropy_pv, ws_pv_ensembled, entropy_pv_ensembled };

inline constexpr std::array<Variant, 5> kAllVariants = {Variant::baseline, Variant::ws_pv, Variant::entropy_pv,
                                                        Variant::ws_pv_ensembled, Variant::entropy_pv_ensembled};

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::ws_pv: return "ws-pv";
    case Variant::entropy_pv: return "entropy-pv";
    case Variant::ws_pv_ensembled: return "ws-pv-ensembled";
    case Variant::entropy_pv_ensembled: return "entropy-pv-ensembled";
  }
  return "?";
}

inline Variant variant_from_string(std::string_view s) {
  for (auto v : kAllVariants)
    if (s == to_string(v)) return v;
  throw Error("invalid_input", "unknown variant '" + std::string(s) + "'");
}

inline bool is_ensembled(Variant v) { return v == Variant::ws_pv_ensembled || v == Variant::entropy_pv_ensembled; }

/// The non-ensembled counterpart of an ensembled variant (identity otherwise).
inline Variant without_ensemble(Variant v) {
  if (v == Variant::ws_pv_ensembled) return Variant::ws_pv;
  if (v == Variant::entropy_pv_ensembled) return Variant::entropy_pv;
  return v;
}

/// `base` with the variant's data-uncertainty kind and ensemble weight. The
/// non-ensembled variants train with alpha = 0.
inline TrainConfig variant_config(Variant v, TrainConfig base) {
  if (v == Variant::baseline) {
    base.alpha = 0.0;
    return base;
  }
  base.data_kind =
      v == Variant::ws_pv || v == Variant::ws_pv_ensembled ? UncertaintyKind::ws : UncertaintyKind::entropy;
  if (!is_ensembled(v)) base.alpha = 0.0;
  return base;
}

/// `base` with its three seeds derived from one run seed.
inline TrainConfig with_run_seed(TrainConfig base, std::uint64_t seed) {
  base.init_seed = derive_seed(seed, 1);
  base.dropout_seed = derive_seed(seed, 2);
  base.shuffle_seed = derive_seed(seed, 3);
  return base;
}

struct VariantRun {
  Variant variant = Variant::baseline;
  TrainConfig config;
  JointModel best;  // f1 at its best validation F1
  JointModel last;
  std::optional<JointModel> best_second;
  std::vector<EpochMetrics> log;
  std::optional<SelectionState> selection;
  std::size_t best_epoch = 0;
};

inline VariantRun run_variant(Variant v, const TokenVocabulary& tokens, const TagVocabulary& tags,
                              const std::vector<Example>& data, const std::vector<Sentence>& validation,
                              const TrainConfig& base, const TrainHooks& hooks = {}) {
  VariantRun run{v, variant_config(v, base), {}, {}, std::nullopt, {}, std::nullopt, 0};
  if (v == Variant::baseline) {
    auto r = train_baseline(tokens, tags, data, validation, run.config, hooks);
    run.best = std::move(r.best);
    run.last = std::move(r.last);
    run.log = std::move(r.log);
    run.best_epoch = r.best_epoch;
    return run;
  }
  auto r = run_bootstrap(tokens, tags, data, validation, run.config, hooks);
  run.best = std::move(r.best.first);
  run.best_second = std::move(r.best.second);
  run.last = std::move(r.last.first);
  run.log = std::move(r.log);
  run.selection = std::move(r.selection);
  run.best_epoch = r.best_epoch;
  return run;
}

}  // namespace unbed
