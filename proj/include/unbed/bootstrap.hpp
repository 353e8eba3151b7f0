// Uncertainty-aware bootstrap training.
//
// Two identically shaped joint models f1, f2 are trained on a trusted subset
// C of the training set D with
//
//   L = (L_c(f1) + L_c(f2)) + alpha * sum_instances sum_t KL(P_f1(y_t) || P_f2(y_t))
//
// C starts as the instances whose data uncertainty is below tau_d and is
// reselected from all of D after every epoch as the instances whose MC-dropout
// probability variance under f1 is below tau_m.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unbed/eval.hpp"
#include "unbed/model.hpp"
#include "unbed/selection.hpp"
#include "unbed/uncertainty.hpp"

namespace unbed {

struct TrainConfig {
  double alpha = 1.0;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  double dropout_rate = 0.1;
  double tau_d = 0.5;
  double tau_m = 0.6;
  std::size_t mc_passes = 8;
  std::size_t max_epochs = 10;
  std::size_t patience = 3;
  std::uint64_t init_seed = 1;
  std::uint64_t dropout_seed = 2;
  std::uint64_t shuffle_seed = 3;
  UncertaintyKind data_kind = UncertaintyKind::ws;
  bool combine_data_scores = false;

  std::size_t width = 16;
  TokenDistribution distribution = TokenDistribution::crf_marginals;
  double grad_clip = 5.0;  // global-norm clip per model step; 0 disables

  // Warm pass of the data-uncertainty scorer: a copy of f1 trained for one
  // epoch on this fraction of D before scoring.
  double warm_fraction = 0.2;
  // Quantile fallback when a threshold keeps nothing or more than
  // `fallback_ceiling` of D (thresholds >= 1 always keep everything).
  double fallback_initial_quantile = 0.5;
  double fallback_iteration_quantile = 0.7;
  double fallback_ceiling = 0.95;
  bool accumulate_only = false;
  // Easy-to-hard batch order by current uncertainty. Unset = on iff some
  // threshold filters (tau_d < 1 or tau_m < 1).
  std::optional<bool> curriculum;
  unsigned threads = 1;

  void validate() const {
    require(alpha >= 0.0, "invalid_input", "alpha must be non-negative");
    require(learning_rate > 0.0, "invalid_input", "learning rate must be positive");
    require(batch_size >= 1, "invalid_input", "batch size must be positive");
    require(dropout_rate >= 0.0 && dropout_rate < 1.0, "invalid_input", "dropout rate must lie in [0, 1)");
    require(tau_d >= 0.0 && tau_d <= 1.0 && tau_m >= 0.0 && tau_m <= 1.0, "invalid_input",
            "thresholds must lie in [0, 1]");
    require(mc_passes >= 2, "invalid_input", "K must be at least 2");
    require(patience >= 1, "invalid_input", "patience must be at least 1");
    require(max_epochs >= 1, "invalid_input", "max epochs must be at least 1");
    require(data_kind != UncertaintyKind::pv, "invalid_input", "data uncertainty must be ws or entropy");
    require(width >= 1, "invalid_input", "width must be positive");
  }

  bool curriculum_enabled() const { return curriculum.value_or(tau_d < 1.0 || tau_m < 1.0); }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j = {{"alpha", alpha},
                                {"learning_rate", learning_rate},
                                {"batch_size", batch_size},
                                {"dropout_rate", dropout_rate},
                                {"tau_d", tau_d},
                                {"tau_m", tau_m},
                                {"k", mc_passes},
                                {"max_epochs", max_epochs},
                                {"patience", patience},
                                {"init_seed", init_seed},
                                {"dropout_seed", dropout_seed},
                                {"shuffle_seed", shuffle_seed},
                                {"data_kind", to_string(data_kind)},
                                {"combine_data_scores", combine_data_scores},
                                {"width", width},
                                {"distribution", distribution == TokenDistribution::crf_marginals ? "crf" : "softmax"},
                                {"grad_clip", grad_clip},
                                {"warm_fraction", warm_fraction},
                                {"fallback_initial_quantile", fallback_initial_quantile},
                                {"fallback_iteration_quantile", fallback_iteration_quantile},
                                {"fallback_ceiling", fallback_ceiling},
                                {"accumulate_only", accumulate_only},
                                {"curriculum", curriculum_enabled()}};
    return j;
  }

  std::uint64_t fingerprint() const { return fnv1a(to_json().dump()); }
};

/// Adam with bias correction.
class Adam {
 public:
  Adam() = default;
  explicit Adam(const ModelParams& like, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(like.zeros_like()), v_(like.zeros_like()), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ModelParams& params, const ModelGrad& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    std::vector<const Matrix*> g;
    grad.visit([&](const char*, const Matrix& x) { g.push_back(&x); });
    std::vector<Matrix*> m, v;
    m_.visit([&](const char*, Matrix& x) { m.push_back(&x); });
    v_.visit([&](const char*, Matrix& x) { v.push_back(&x); });
    std::size_t i = 0;
    params.visit([&](const char*, Matrix& p) {
      auto& pd = p.data();
      const auto& gd = g[i]->data();
      auto& md = m[i]->data();
      auto& vd = v[i]->data();
      for (std::size_t k = 0; k < pd.size(); ++k) {
        md[k] = beta1_ * md[k] + (1.0 - beta1_) * gd[k];
        vd[k] = beta2_ * vd[k] + (1.0 - beta2_) * gd[k] * gd[k];
        pd[k] -= lr_ * (md[k] / c1) / (std::sqrt(vd[k] / c2) + eps_);
      }
      ++i;
    });
  }

  std::size_t steps() const noexcept { return t_; }

 private:
  ModelParams m_, v_;
  std::size_t t_ = 0;
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
};

inline void clip_global_norm(ModelGrad& g, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  g.visit([&](const char*, const Matrix& m) {
    for (double v : m.data()) sq += v * v;
  });
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm)) return;
  const double s = max_norm / norm;
  g.visit([&](const char*, Matrix& m) {
    for (double& v : m.data()) v *= s;
  });
}

struct EnsembleLoss {
  double loss = 0.0;
  Matrix d_first;   // dL/dP_f1
  Matrix d_second;  // dL/dP_f2
};

/// sum_t KL(p_t || q_t) over the rows of two token distributions. Entries
/// are floored at 1e-12 inside the logarithms only.
inline EnsembleLoss ensemble_loss(const Matrix& p, const Matrix& q) {
  require(p.rows() == q.rows() && p.cols() == q.cols(), "invalid_input", "ensemble loss shape mismatch");
  constexpr double kFloor = 1e-12;
  EnsembleLoss out{0.0, Matrix(p.rows(), p.cols()), Matrix(p.rows(), p.cols())};
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p.data()[i], qi = q.data()[i];
    const double lp = std::log(std::max(pi, kFloor)), lq = std::log(std::max(qi, kFloor));
    out.loss += pi * (lp - lq);
    out.d_first.data()[i] = lp - lq + (pi > kFloor ? 1.0 : 0.0);
    out.d_second.data()[i] = qi > kFloor ? -pi / qi : 0.0;
  }
  return out;
}

/// f1 and f2 with their optimizer states.
struct DualModel {
  JointModel first, second;
  Adam first_opt, second_opt;
};

struct StepLosses {
  double crf_first = 0.0;   // L_c1, batch mean
  double crf_second = 0.0;  // L_c2, batch mean
  double ensemble = 0.0;    // L_e, batch mean
  double total = 0.0;
};

/// Dropout seed of one (model, step, batch slot).
inline std::uint64_t step_dropout_seed(std::uint64_t base, std::size_t model_index, std::size_t step,
                                       std::size_t slot) {
  return derive_seed(base, 0x64726f70ULL, model_index, step, slot);
}

namespace detail {

/// Forward passes and CRF gradients of one model over a batch; the shared
/// single-model path of baseline and bootstrap training.
struct BatchWork {
  std::vector<JointModel::Pass> passes;
  std::vector<DropoutConfig> dropout;
  std::vector<crf::NllResult> nll;
  double mean_loss = 0.0;
};

inline BatchWork forward_batch(const JointModel& model, std::span<const Example* const> batch,
                               const TrainConfig& cfg, std::size_t model_index, std::size_t step) {
  BatchWork w;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto drop = DropoutConfig::sampled(cfg.dropout_rate, step_dropout_seed(cfg.dropout_seed, model_index, step, s));
    w.dropout.push_back(drop);
    w.passes.push_back(model.forward(*batch[s], drop));
    w.nll.push_back(model.nll(*batch[s], w.passes.back()));
    w.mean_loss += w.nll.back().loss;
  }
  w.mean_loss /= static_cast<double>(batch.size());
  return w;
}

/// Batch-mean gradient of one model: CRF terms plus optional extra
/// emission/chain gradients per batch slot.
inline ModelGrad batch_gradient(const JointModel& model, const BatchWork& w, const std::vector<Matrix>* extra_dz,
                                const std::vector<crf::ChainGrad>* extra_chain) {
  ModelGrad grad = model.params().zeros_like();
  const double scale = 1.0 / static_cast<double>(w.passes.size());
  for (std::size_t s = 0; s < w.passes.size(); ++s) {
    if (extra_dz) {
      Matrix dz = w.nll[s].d_emissions;
      crf::ChainGrad dc = w.nll[s].d_chain;
      for (std::size_t k = 0; k < dz.size(); ++k) dz.data()[k] += (*extra_dz)[s].data()[k];
      for (auto [d, e] : {std::pair{&dc.transitions, &(*extra_chain)[s].transitions},
                          std::pair{&dc.start, &(*extra_chain)[s].start}, std::pair{&dc.end, &(*extra_chain)[s].end}})
        for (std::size_t k = 0; k < d->size(); ++k) d->data()[k] += e->data()[k];
      model.backward(w.passes[s], w.dropout[s], dz, dc, grad, scale);
    } else {
      model.backward(w.passes[s], w.dropout[s], w.nll[s].d_emissions, w.nll[s].d_chain, grad, scale);
    }
  }
  return grad;
}

inline void apply_step(JointModel& model, Adam& opt, ModelGrad grad, const TrainConfig& cfg) {
  clip_global_norm(grad, cfg.grad_clip);
  opt.step(model.params(), grad);
}

}  // namespace detail

/// One optimizer step on a single model with the CRF loss only.
inline double train_step_single(JointModel& model, Adam& opt, std::span<const Example* const> batch,
                                const TrainConfig& cfg, std::size_t step) {
  require(!batch.empty(), "invalid_input", "empty batch");
  auto w = detail::forward_batch(model, batch, cfg, 0, step);
  require(std::isfinite(w.mean_loss), "non_finite", "non-finite CRF loss at step " + std::to_string(step));
  detail::apply_step(model, opt, detail::batch_gradient(model, w, nullptr, nullptr), cfg);
  return w.mean_loss;
}

struct DualGradients {
  StepLosses losses;
  ModelGrad first, second;
};

/// Losses and unclipped gradients of L_total = L_c1 + L_c2 + alpha * L_e,
/// each term averaged over the batch. Each model draws its own dropout
/// masks for `step`; KL gradients reach both models.
inline DualGradients dual_gradients(const DualModel& dual, std::span<const Example* const> batch,
                                    const TrainConfig& cfg, std::size_t step) {
  require(!batch.empty(), "invalid_input", "empty batch");
  auto w1 = detail::forward_batch(dual.first, batch, cfg, 0, step);
  auto w2 = detail::forward_batch(dual.second, batch, cfg, 1, step);
  DualGradients out{{w1.mean_loss, w2.mean_loss, 0.0, 0.0}, {}, {}};
  if (cfg.alpha == 0.0) {
    out.losses.total = out.losses.crf_first + out.losses.crf_second;
    require(std::isfinite(out.losses.total), "non_finite", "non-finite training loss at step " + std::to_string(step));
    out.first = detail::batch_gradient(dual.first, w1, nullptr, nullptr);
    out.second = detail::batch_gradient(dual.second, w2, nullptr, nullptr);
    return out;
  }
  // The batch-mean scale of batch_gradient also applies to the KL terms.
  std::vector<Matrix> dz1, dz2;
  std::vector<crf::ChainGrad> dc1, dc2;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    auto kl = ensemble_loss(w1.passes[s].distribution, w2.passes[s].distribution);
    out.losses.ensemble += kl.loss;
    for (double& v : kl.d_first.data()) v *= cfg.alpha;
    for (double& v : kl.d_second.data()) v *= cfg.alpha;
    auto v1 = dual.first.distribution_pullback(w1.passes[s], kl.d_first);
    auto v2 = dual.second.distribution_pullback(w2.passes[s], kl.d_second);
    dz1.push_back(std::move(v1.d_emissions));
    dc1.push_back(std::move(v1.d_chain));
    dz2.push_back(std::move(v2.d_emissions));
    dc2.push_back(std::move(v2.d_chain));
  }
  out.losses.ensemble /= static_cast<double>(batch.size());
  out.losses.total = out.losses.crf_first + out.losses.crf_second + cfg.alpha * out.losses.ensemble;
  require(std::isfinite(out.losses.total), "non_finite", "non-finite training loss at step " + std::to_string(step));
  out.first = detail::batch_gradient(dual.first, w1, &dz1, &dc1);
  out.second = detail::batch_gradient(dual.second, w2, &dz2, &dc2);
  return out;
}

/// One optimizer step on both models (see dual_gradients).
inline StepLosses train_step(DualModel& dual, std::span<const Example* const> batch, const TrainConfig& cfg,
                             std::size_t step) {
  auto g = dual_gradients(dual, batch, cfg, step);
  detail::apply_step(dual.first, dual.first_opt, std::move(g.first), cfg);
  detail::apply_step(dual.second, dual.second_opt, std::move(g.second), cfg);
  return g.losses;
}

/// One line of the per-epoch metrics log.
struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t trained_on = 0;  // |C| used for this epoch
  double loss_crf_first = 0.0;
  std::optional<double> loss_crf_second;
  std::optional<double> loss_ensemble;
  double val_precision = 0.0, val_recall = 0.0, val_f1 = 0.0;
  std::optional<double> mean_model_uncertainty;
  std::optional<std::size_t> next_selected;
  std::optional<double> clean_fraction;  // of the trained-on set, when provenance is known
  bool aborted = false;                  // epoch cut short by a non-finite loss

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j = {{"epoch", epoch}, {"C", trained_on}, {"L_c1", loss_crf_first}};
    if (loss_crf_second) j["L_c2"] = *loss_crf_second;
    if (loss_ensemble) j["L_e"] = *loss_ensemble;
    j["val_precision"] = val_precision;
    j["val_recall"] = val_recall;
    j["val_f1"] = val_f1;
    if (mean_model_uncertainty) j["mean_u_m"] = *mean_model_uncertainty;
    if (next_selected) j["next_C"] = *next_selected;
    if (clean_fraction) j["clean_fraction_of_C"] = *clean_fraction;
    if (aborted) j["aborted"] = true;
    return j;
  }

  /// The fields shared by baseline and bootstrap logs (f1's trajectory).
  nlohmann::ordered_json trajectory_json() const {
    return {{"epoch", epoch},          {"C", trained_on},        {"L_c1", loss_crf_first},
            {"val_precision", val_precision}, {"val_recall", val_recall}, {"val_f1", val_f1}};
  }
};

inline std::string metrics_jsonl(const std::vector<EpochMetrics>& log) {
  std::string out;
  for (const auto& m : log) out += m.to_json().dump() + "\n";
  return out;
}

inline std::string trajectory_jsonl(const std::vector<EpochMetrics>& log) {
  std::string out;
  for (const auto& m : log) out += m.trajectory_json().dump() + "\n";
  return out;
}

/// Optional observers. `clean_flags` (parallel to D) is used for reporting
/// only and never influences training.
struct TrainHooks {
  const std::vector<Provenance>* clean_flags = nullptr;
  const std::map<std::string, Matrix>* imported_probabilities = nullptr;
  std::function<void(const EpochMetrics&)> on_epoch;
  std::function<void(const std::string&)> warn;
};

struct BootstrapResult {
  DualModel best;  // parameters at the best validation F1 (of f1)
  DualModel last;
  SelectionState selection;
  std::vector<EpochMetrics> log;
  std::size_t best_epoch = 0;
  double best_f1 = 0.0;
};

struct BaselineResult {
  JointModel best;
  JointModel last;
  std::vector<EpochMetrics> log;
  std::size_t best_epoch = 0;
  double best_f1 = 0.0;
};

namespace detail {

inline std::optional<double> clean_fraction(const std::vector<std::size_t>& members, const TrainHooks& hooks) {
  if (!hooks.clean_flags || members.empty()) return std::nullopt;
  std::size_t clean = 0;
  for (auto i : members) {
    const auto p = hooks.clean_flags->at(i);
    if (p == Provenance::unknown) return std::nullopt;
    clean += p == Provenance::clean;
  }
  return static_cast<double>(clean) / static_cast<double>(members.size());
}

/// Indices of D whose score is below `tau`. tau >= 1 keeps everything, and
/// so do scores that are all equal (nothing to rank by). Otherwise an empty
/// result, or one above `ceiling` of D, falls back to the `quantile` most
/// confident fraction.
inline std::vector<std::size_t> select_below(const std::vector<UncertaintyScore>& scores, double tau, double quantile,
                                             double ceiling, bool& fallback) {
  std::vector<std::size_t> keep;
  fallback = false;
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end(),
                                            [](const auto& a, const auto& b) { return a.value < b.value; });
  if (tau >= 1.0 || lo->value == hi->value) {
    keep.resize(scores.size());
    std::iota(keep.begin(), keep.end(), 0);
    return keep;
  }
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i].value < tau) keep.push_back(i);
  const double frac = static_cast<double>(keep.size()) / static_cast<double>(scores.size());
  if (!keep.empty() && frac <= ceiling) return keep;
  fallback = true;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a].value < scores[b].value; });
  const auto k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(quantile * static_cast<double>(scores.size()))));
  keep.assign(order.begin(), order.begin() + static_cast<long>(std::min(k, order.size())));
  std::sort(keep.begin(), keep.end());
  return keep;
}

inline double mean_value(const std::vector<UncertaintyScore>& s, const std::vector<std::size_t>* subset = nullptr) {
  double acc = 0.0;
  if (subset) {
    for (auto i : *subset) acc += s[i].value;
    return subset->empty() ? 0.0 : acc / static_cast<double>(subset->size());
  }
  for (const auto& x : s) acc += x.value;
  return s.empty() ? 0.0 : acc / static_cast<double>(s.size());
}

/// Epoch order over `members`: seeded shuffle, then (with a curriculum) a
/// stable sort by ascending uncertainty.
inline std::vector<std::size_t> epoch_order(std::vector<std::size_t> members, std::uint64_t shuffle_seed,
                                            std::size_t epoch, const std::vector<UncertaintyScore>* curriculum) {
  Rng rng(derive_seed(shuffle_seed, 0x73687566ULL, epoch));
  rng.shuffle(members);
  if (curriculum)
    std::stable_sort(members.begin(), members.end(),
                     [&](std::size_t a, std::size_t b) { return (*curriculum)[a].value < (*curriculum)[b].value; });
  return members;
}

/// Trains `model` for one epoch over `order`; returns the mean CRF loss, or
/// nullopt after restoring `model` when a non-finite loss appears.
inline std::optional<double> single_epoch(JointModel& model, Adam& opt, const std::vector<Example>& data,
                                          const std::vector<std::size_t>& order, const TrainConfig& cfg,
                                          std::size_t& step) {
  const JointModel snapshot = model;
  const Adam opt_snapshot = opt;
  double loss = 0.0;
  std::size_t batches = 0;
  std::vector<const Example*> batch;
  for (std::size_t i = 0; i < order.size(); i += cfg.batch_size) {
    batch.clear();
    for (std::size_t j = i; j < std::min(order.size(), i + cfg.batch_size); ++j) batch.push_back(&data[order[j]]);
    try {
      loss += train_step_single(model, opt, batch, cfg, step++);
    } catch (const Error& e) {
      if (e.code() != "non_finite") throw;
      model = snapshot;
      opt = opt_snapshot;
      return std::nullopt;
    }
    ++batches;
  }
  return batches ? loss / static_cast<double>(batches) : 0.0;
}

}  // namespace detail

/// Builds the token vocabulary of a training set.
inline TokenVocabulary training_vocabulary(const std::vector<Instance>& instances) {
  std::vector<std::string> all;
  for (const auto& i : instances) all.insert(all.end(), i.tokens.begin(), i.tokens.end());
  return TokenVocabulary::from_tokens(all);
}

/// Single model, full D, CRF loss only, shuffled batches; early stopping on
/// validation F1 with `patience`.
inline BaselineResult train_baseline(const TokenVocabulary& tokens, const TagVocabulary& tags,
                                     const std::vector<Example>& data, const std::vector<Sentence>& validation,
                                     const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  require(!data.empty(), "invalid_input", "training set is empty");
  JointModel model(tokens, tags, cfg.width, cfg.init_seed, cfg.distribution);
  Adam opt(model.params(), cfg.learning_rate);
  BaselineResult result{model, model, {}, 0, -1.0};
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  std::size_t step = 0, stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto order = detail::epoch_order(all, cfg.shuffle_seed, epoch, nullptr);
    EpochMetrics m;
    m.epoch = epoch;
    m.trained_on = all.size();
    const auto loss = detail::single_epoch(model, opt, data, order, cfg, step);
    m.aborted = !loss.has_value();
    if (m.aborted && hooks.warn) hooks.warn("epoch " + std::to_string(epoch) + ": non-finite loss, epoch aborted");
    m.loss_crf_first = loss.value_or(std::nan(""));
    const auto report = evaluate(model, validation);
    m.val_precision = report.precision, m.val_recall = report.recall, m.val_f1 = report.f1;
    m.clean_fraction = detail::clean_fraction(all, hooks);
    result.log.push_back(m);
    if (hooks.on_epoch) hooks.on_epoch(m);
    if (m.val_f1 > result.best_f1) {
      result.best_f1 = m.val_f1, result.best_epoch = epoch, result.best = model, stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  result.last = model;
  return result;
}

/// Full bootstrap loop over D (`data`), validating on `validation`.
inline BootstrapResult run_bootstrap(const TokenVocabulary& tokens, const TagVocabulary& tags,
                                     const std::vector<Example>& data, const std::vector<Sentence>& validation,
                                     const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  require(!data.empty(), "invalid_input", "training set is empty");
  auto warn = [&](const std::string& msg) {
    if (hooks.warn) hooks.warn(msg);
  };

  DualModel dual{JointModel(tokens, tags, cfg.width, cfg.init_seed, cfg.distribution),
                 JointModel(tokens, tags, cfg.width, derive_seed(cfg.init_seed, 0x6632ULL), cfg.distribution),
                 {}, {}};
  dual.first_opt = Adam(dual.first.params(), cfg.learning_rate);
  dual.second_opt = Adam(dual.second.params(), cfg.learning_rate);

  ScoreOptions score_opt;
  score_opt.threads = cfg.threads;
  score_opt.combine = cfg.combine_data_scores;
  score_opt.imported = hooks.imported_probabilities;

  // Data uncertainty from a warm-passed copy of f1; f1 itself stays at its
  // initialization.
  std::vector<UncertaintyScore> current;
  {
    JointModel scorer = dual.first;
    if (!hooks.imported_probabilities && cfg.warm_fraction > 0.0) {
      Adam opt(scorer.params(), cfg.learning_rate);
      std::vector<std::size_t> idx(data.size());
      std::iota(idx.begin(), idx.end(), 0);
      Rng rng(derive_seed(cfg.shuffle_seed, 0x7761726dULL));
      rng.shuffle(idx);
      idx.resize(std::max<std::size_t>(1, static_cast<std::size_t>(cfg.warm_fraction * static_cast<double>(data.size()))));
      TrainConfig warm_cfg = cfg;
      warm_cfg.dropout_seed = derive_seed(cfg.dropout_seed, 0x7761726dULL);
      std::size_t step = 0;
      if (!detail::single_epoch(scorer, opt, data, idx, warm_cfg, step)) warn("warm pass aborted on a non-finite loss");
    }
    current = score_dataset(scorer, data, cfg.data_kind, score_opt);
  }

  BootstrapResult result{dual, dual, {}, {}, 0, -1.0};
  SelectionState& state = result.selection;
  state.dataset_size = data.size();
  bool fallback = false;
  state.trusted = detail::select_below(current, cfg.tau_d, cfg.fallback_initial_quantile, cfg.fallback_ceiling, fallback);
  if (fallback) warn("initial selection fell back to the quantile rule");
  state.history.push_back({0, state.trusted.size(), detail::mean_value(current), 0.0, fallback, state.trusted});

  const bool curriculum = cfg.curriculum_enabled();
  std::size_t step = 0, stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    state.current_iteration = epoch;
    const auto order = detail::epoch_order(state.trusted, cfg.shuffle_seed, epoch, curriculum ? &current : nullptr);

    EpochMetrics m;
    m.epoch = epoch;
    m.trained_on = state.trusted.size();
    m.clean_fraction = detail::clean_fraction(state.trusted, hooks);

    const DualModel snapshot = dual;
    double l1 = 0.0, l2 = 0.0, le = 0.0;
    std::size_t batches = 0;
    std::vector<const Example*> batch;
    for (std::size_t i = 0; i < order.size(); i += cfg.batch_size) {
      batch.clear();
      for (std::size_t j = i; j < std::min(order.size(), i + cfg.batch_size); ++j) batch.push_back(&data[order[j]]);
      try {
        const auto s = train_step(dual, batch, cfg, step++);
        l1 += s.crf_first, l2 += s.crf_second, le += s.ensemble, ++batches;
      } catch (const Error& e) {
        if (e.code() != "non_finite") throw;
        dual = snapshot;
        m.aborted = true;
        warn("epoch " + std::to_string(epoch) + ": " + e.what() + "; restored the last good state");
        break;
      }
    }
    const double nb = batches ? static_cast<double>(batches) : 1.0;
    m.loss_crf_first = m.aborted ? std::nan("") : l1 / nb;
    m.loss_crf_second = m.aborted ? std::nan("") : l2 / nb;
    m.loss_ensemble = m.aborted ? std::nan("") : le / nb;

    const auto report = evaluate(dual.first, validation);
    m.val_precision = report.precision, m.val_recall = report.recall, m.val_f1 = report.f1;

    score_opt.mc = {cfg.mc_passes, derive_seed(cfg.dropout_seed, 0x7076ULL, epoch), cfg.dropout_rate};
    current = score_dataset(dual.first, data, UncertaintyKind::pv, score_opt);
    m.mean_model_uncertainty = detail::mean_value(current);
    auto next = detail::select_below(current, cfg.tau_m, cfg.fallback_iteration_quantile, cfg.fallback_ceiling, fallback);
    if (fallback) warn("epoch " + std::to_string(epoch) + ": selection fell back to the quantile rule");
    if (cfg.accumulate_only) {
      std::vector<std::size_t> merged;
      std::set_union(state.trusted.begin(), state.trusted.end(), next.begin(), next.end(), std::back_inserter(merged));
      next = std::move(merged);
    }
    state.trusted = std::move(next);
    m.next_selected = state.trusted.size();
    state.history.push_back({epoch, state.trusted.size(), detail::mean_value(current, &state.trusted), m.val_f1,
                             fallback, state.trusted});

    result.log.push_back(m);
    if (hooks.on_epoch) hooks.on_epoch(m);
    if (m.val_f1 > result.best_f1) {
      result.best_f1 = m.val_f1, result.best_epoch = epoch, result.best = dual, stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  result.last = std::move(dual);
  return result;
}

}  // namespace unbed
