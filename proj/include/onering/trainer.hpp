#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "onering/autodiff.hpp"
#include "onering/error.hpp"
#include "onering/memory_bank.hpp"
#include "onering/metrics.hpp"
#include "onering/model.hpp"
#include "onering/objectives.hpp"
#include "onering/optim.hpp"
#include "onering/scenario.hpp"

namespace onering {

enum class Variant { OneRing, OneRingPlus };

inline const char* to_string(Variant v) { return v == Variant::OneRing ? "onering" : "onering_plus"; }

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  /// Learning rate for target adaptation; unset means 0.1 * lr.
  std::optional<double> adapt_lr;
  std::size_t epochs_source = 100;
  std::size_t epochs_adapt = 20;
  std::size_t bs = 32;
  double lambda_second_ce = 1.0;
  /// Fit the model's input standardization to the source samples before training.
  bool standardize_inputs = true;
  bool two_phase = false;
  std::size_t phase1_epochs = 0;
  RatioMode ratio_mode = RatioMode::MiniBatch;
  Variant variant = Variant::OneRing;
  /// Reciprocal-share weighting of the known/unknown entropy terms. Off gives
  /// plain batch-mean entropy minimization.
  bool weighted_entropy = true;
  AadConfig aad;
  std::uint64_t seed = 0;

  double effective_adapt_lr() const { return adapt_lr.value_or(0.1 * lr); }

  /// Every violated invariant, empty when valid.
  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (!(lr > 0.0)) out.push_back("train.lr must be > 0");
    if (adapt_lr && !(*adapt_lr > 0.0)) out.push_back("train.adapt_lr must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) out.push_back("train.momentum must be in [0, 1)");
    if (bs < 1) out.push_back("train.bs must be >= 1");
    if (lambda_second_ce < 0.0) out.push_back("train.lambda_second_ce must be >= 0");
    if (two_phase && phase1_epochs > epochs_source) out.push_back("train.phase1_epochs must be <= epochs_source");
    if (aad.k < 1) out.push_back("train.aad_k must be >= 1");
    if (aad.beta < 0.0) out.push_back("train.aad_beta must be >= 0");
    return out;
  }

  void validate() const {
    const auto p = problems();
    if (p.empty()) return;
    std::string msg;
    for (const auto& s : p) msg += (msg.empty() ? "" : "; ") + s;
    throw Error(ErrorKind::InvalidConfig, msg);
  }
};

/// One line of the JSON-lines training log.
struct EpochRecord {
  std::string phase;  // "source" or "adapt"
  std::size_t epoch = 0;
  double loss = 0.0;
  std::optional<double> accuracy;  // source training accuracy
  std::optional<std::size_t> n_known_hat;
  std::optional<std::size_t> n_unknown_hat;
  std::optional<MetricsReport> metrics;
};

inline nlohmann::ordered_json to_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["phase"] = r.phase;
  j["epoch"] = r.epoch;
  j["loss"] = r.loss;
  if (r.accuracy) j["accuracy"] = *r.accuracy;
  if (r.n_known_hat) j["n_known_hat"] = *r.n_known_hat;
  if (r.n_unknown_hat) j["n_unknown_hat"] = *r.n_unknown_hat;
  if (r.metrics) {
    j["os_star"] = r.metrics->os_star;
    j["unk"] = r.metrics->unk;
    j["h"] = r.metrics->h;
  }
  return j;
}

using TrainingLog = std::vector<EpochRecord>;

/// Optional per-epoch evaluation hook. Supplied by callers that hold labels;
/// adaptation itself never sees any.
using EvalHook = std::function<std::optional<MetricsReport>(const OneRingModel&)>;

namespace detail {

inline std::vector<std::size_t> known_labels(const Dataset& data, std::size_t n_known) {
  std::vector<std::size_t> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] < 0 || static_cast<std::size_t>(data.labels[i]) >= n_known) {
      throw Error(ErrorKind::InvalidLabel, "source sample " + std::to_string(i) + " has label " +
                                               std::to_string(data.labels[i]) + " outside the source classes");
    }
    out[i] = static_cast<std::size_t>(data.labels[i]);
  }
  return out;
}

}  // namespace detail

/// Supervised training on labeled source data. Open-head models use the
/// two-term objective (after `phase1_epochs` of plain CE when two_phase is
/// set); plain-head models always use CE.
inline TrainingLog train_source(OneRingModel& model, const Dataset& source, const TrainConfig& cfg) {
  cfg.validate();
  if (source.size() == 0) throw Error(ErrorKind::InvalidConfig, "empty source dataset");
  const auto labels = detail::known_labels(source, model.n_known());
  const bool open = model.spec().open_head;
  if (cfg.standardize_inputs) model.fit_input_normalization(source.samples);
  SgdMomentum opt(cfg.lr, cfg.momentum);
  const auto params = model.params().all();
  TrainingLog log;
  for (std::size_t epoch = 0; epoch < cfg.epochs_source; ++epoch) {
    const bool second_term = open && !(cfg.two_phase && epoch < cfg.phase1_epochs);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    const auto plan = batches(source, cfg.bs, cfg.seed, epoch);
    for (const auto& idx : plan) {
      const Tensor x = source.samples.gather_rows(idx);
      std::vector<std::size_t> y(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) y[i] = labels[idx[i]];
      Graph graph;
      auto out = forward(graph, model, x);
      Var loss = second_term ? source_loss(out.logits, y, cfg.lambda_second_ce) : cross_entropy(out.logits, y);
      graph.backward(loss);
      opt.step(params);
      loss_sum += loss.item() * static_cast<double>(idx.size());
      const auto pred = predict(out.logits.value());
      for (std::size_t i = 0; i < y.size(); ++i) correct += pred[i] == y[i];
    }
    EpochRecord rec;
    rec.phase = "source";
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(source.size());
    rec.accuracy = static_cast<double>(correct) / static_cast<double>(source.size());
    log.push_back(std::move(rec));
  }
  return log;
}

/// Source-free target adaptation. Only unlabeled target samples are passed
/// in; the head stays frozen and only extractor parameters are updated.
inline TrainingLog adapt_target(OneRingModel& model, const Tensor& target_samples, const TrainConfig& cfg,
                                const EvalHook& eval = {}) {
  cfg.validate();
  if (!model.spec().open_head) throw Error(ErrorKind::InvalidConfig, "adaptation requires an open (n+1)-way head");
  const std::size_t n = target_samples.rows();
  if (n == 0) throw Error(ErrorKind::InvalidConfig, "empty target set");
  const std::size_t unknown = model.unknown_index();
  const std::size_t classes = model.spec().head_width();
  SgdMomentum opt(cfg.effective_adapt_lr(), cfg.momentum);
  const auto extractor = model.params().extractor;

  std::optional<MemoryBank> bank;
  if (cfg.variant == Variant::OneRingPlus && cfg.epochs_adapt > 0) {
    bank.emplace(n, model.spec().feature_dim, classes);
    const auto all = infer(model, target_samples);
    std::vector<std::size_t> every(n);
    for (std::size_t i = 0; i < n; ++i) every[i] = i;
    bank->update(every, all.features, softmax_values(all.logits));
  }

  TrainingLog log;
  for (std::size_t epoch = 0; epoch < cfg.epochs_adapt; ++epoch) {
    std::vector<std::size_t> dataset_preds;
    if (cfg.ratio_mode == RatioMode::WholeDataset) dataset_preds = predict(infer(model, target_samples).logits);
    double loss_sum = 0.0;
    for (const auto& idx : batches(n, cfg.bs, cfg.seed, epoch)) {
      const Tensor x = target_samples.gather_rows(idx);
      Graph graph;
      auto out = forward(graph, model, x, /*train_extractor=*/true, /*train_head=*/false);
      const auto batch_preds = predict(out.logits.value());
      const auto ratio = estimate_ratio(batch_preds, unknown, cfg.ratio_mode, dataset_preds);
      Var loss = cfg.variant == Variant::OneRing
                     ? weighted_entropy_loss(out.logits, ratio, cfg.weighted_entropy)
                     : aad_loss(out.features.value(), out.logits, idx, *bank, cfg.aad, ratio, cfg.weighted_entropy);
      graph.backward(loss);
      opt.step(extractor);
      loss_sum += loss.item() * static_cast<double>(idx.size());
      if (bank) bank->update(idx, out.features.value(), softmax_values(out.logits.value()));
    }
    EpochRecord rec;
    rec.phase = "adapt";
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(n);
    const auto preds = predict(infer(model, target_samples).logits);
    rec.n_unknown_hat = static_cast<std::size_t>(std::count(preds.begin(), preds.end(), unknown));
    rec.n_known_hat = n - *rec.n_unknown_hat;
    if (eval) rec.metrics = eval(model);
    log.push_back(std::move(rec));
  }
  return log;
}

}  // namespace onering
