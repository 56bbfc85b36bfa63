#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "onering/autodiff.hpp"
#include "onering/error.hpp"
#include "onering/memory_bank.hpp"
#include "onering/model.hpp"
#include "onering/tensor.hpp"

namespace onering {

/// Logits with each row's ground-truth column removed. The unknown column,
/// last in the input, stays last (index n-1 of the reduced row).
inline Var masked_logits(Var logits, std::span<const std::size_t> labels) {
  const std::size_t unknown = logits.value().cols() - 1;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= unknown) {
      throw Error(ErrorKind::InvalidLabel, "masked_logits: label " + std::to_string(labels[r]) + " at row " +
                                               std::to_string(r) + " is not a known class");
    }
  }
  return drop_column_per_row(logits, labels);
}

/// Open-head source objective:
///   CE(p(x), y) + lambda * CE(p_hat(x), unknown)
/// where p_hat drops the ground-truth column, making the unknown column the
/// target of the second term. This trains the unknown class to be every
/// source sample's runner-up. lambda = 0 yields plain cross-entropy exactly.
inline Var source_loss(Var logits, std::span<const std::size_t> labels, double lambda = 1.0) {
  Var ce = cross_entropy(logits, labels);
  if (lambda == 0.0) return ce;
  Var reduced = masked_logits(logits, labels);
  const std::vector<std::size_t> unknown_targets(labels.size(), reduced.value().cols() - 1);
  Var second = cross_entropy(reduced, unknown_targets);
  return add(ce, lambda == 1.0 ? second : scale(second, lambda));
}

enum class RatioMode { MiniBatch, WholeDataset };

inline const char* to_string(RatioMode mode) { return mode == RatioMode::MiniBatch ? "batch" : "dataset"; }

/// Predicted known/unknown counts over a population (batch or whole target set).
struct RatioEstimate {
  std::size_t n_known_hat = 0;
  std::size_t n_unknown_hat = 0;
  std::size_t population = 0;
  RatioMode mode = RatioMode::MiniBatch;
};

/// Counts known vs unknown predictions. In mini-batch mode the batch
/// predictions are counted; in whole-dataset mode the cached predictions
/// over the entire target set are.
inline RatioEstimate estimate_ratio(std::span<const std::size_t> batch_predictions, std::size_t unknown_index,
                                    RatioMode mode, std::span<const std::size_t> dataset_predictions = {}) {
  const auto preds = mode == RatioMode::MiniBatch ? batch_predictions : dataset_predictions;
  if (preds.empty()) {
    throw Error(ErrorKind::InvalidConfig, mode == RatioMode::MiniBatch
                                              ? "estimate_ratio: empty batch"
                                              : "estimate_ratio: whole-dataset mode needs dataset predictions");
  }
  RatioEstimate r;
  r.mode = mode;
  r.population = preds.size();
  r.n_unknown_hat = static_cast<std::size_t>(std::count(preds.begin(), preds.end(), unknown_index));
  r.n_known_hat = r.population - r.n_unknown_hat;
  return r;
}

namespace detail {

/// Per-row weights realizing (P/n_k) E_known[.] + (P/n_u) E_unknown[.],
/// with P the ratio population and E the batch expectation (1/bs) sum over
/// the partition. P/n is the reciprocal of the predicted share. In mini-batch
/// mode P = bs, leaving 1/n_k on known rows and 1/n_u on unknown rows.
/// Unweighted: every row gets 1/bs, i.e. the plain batch mean.
inline std::vector<double> partition_weights(std::span<const std::size_t> preds, std::size_t unknown_index,
                                             const RatioEstimate& ratio, bool weighted) {
  const double bs = static_cast<double>(preds.size());
  const double scale = static_cast<double>(ratio.population) / bs;
  // A population count of zero with members present only happens when the
  // cached whole-dataset predictions disagree with the fresh batch ones.
  const double wk = scale / static_cast<double>(std::max<std::size_t>(ratio.n_known_hat, 1));
  const double wu = scale / static_cast<double>(std::max<std::size_t>(ratio.n_unknown_hat, 1));
  std::vector<double> w(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    w[i] = !weighted ? 1.0 / bs : (preds[i] == unknown_index ? wu : wk);
  }
  return w;
}

}  // namespace detail

/// Entropy minimization with known- and unknown-predicted rows reweighted by
/// the reciprocal of their predicted population share. Partitioning uses the
/// current argmax and carries no gradient; an empty partition adds nothing.
inline Var weighted_entropy_loss(Var logits, const RatioEstimate& ratio, bool weighted = true) {
  const std::size_t unknown = logits.value().cols() - 1;
  const auto preds = predict(logits.value());
  const auto w = detail::partition_weights(preds, unknown, ratio, weighted);
  return weighted_sum(row_entropy(logits), w);
}

struct AadConfig {
  std::size_t k = 3;
  double beta = 1.0;
};

/// Per-row pieces of the neighborhood-augmented objective, each of shape [bs].
struct AadTerms {
  Var entropy;
  Var attraction;  // -sum_{j in kNN(i)} p_i . p_j, bank side constant
  Var dispersion;  // beta * sum_{j in batch, j != i} p_i . p_j
  std::vector<std::size_t> predictions;
};

inline AadTerms aad_terms(const Tensor& features, Var logits, std::span<const std::size_t> batch_indices,
                          const MemoryBank& bank, const AadConfig& cfg) {
  if (cfg.k < 1 || cfg.beta < 0.0) throw Error(ErrorKind::InvalidConfig, "aad requires k >= 1 and beta >= 0");
  if (bank.size() < cfg.k + 1) {
    throw Error(ErrorKind::InvalidConfig, "memory bank holds " + std::to_string(bank.size()) +
                                              " entries, need at least k+1 = " + std::to_string(cfg.k + 1));
  }
  const Tensor z = logits.value();
  const std::size_t bs = z.rows(), c = z.cols();
  if (features.rows() != bs || batch_indices.size() != bs) {
    throw Error(ErrorKind::InvalidShape, "aad: features, logits and indices disagree on batch size");
  }
  if (bank.n_classes() != c) throw Error(ErrorKind::InvalidShape, "aad: bank class count differs from logits");

  Graph& g = logits.graph();
  Var probs = softmax(logits);

  Tensor neighbor_sum({bs, c});
  for (std::size_t i = 0; i < bs; ++i) {
    const auto nn = bank.knn(features.row(i), cfg.k, batch_indices[i]);
    auto dst = neighbor_sum.row(i);
    for (std::size_t j : nn) {
      const auto p = bank.predictions().row(j);
      for (std::size_t col = 0; col < c; ++col) dst[col] += p[col];
    }
  }
  Var attraction = scale(row_dot(probs, g.constant(std::move(neighbor_sum))), -1.0);

  Tensor off_diagonal({bs, bs}, 1.0);
  for (std::size_t i = 0; i < bs; ++i) off_diagonal.at(i, i) = 0.0;
  Var gram = matmul(probs, transpose(probs));
  Var dispersion = scale(row_sum(mul(gram, g.constant(std::move(off_diagonal)))), cfg.beta);

  return {row_entropy(logits), attraction, dispersion, predict(z)};
}

/// Weighted entropy plus neighborhood attraction for every row, plus batch
/// dispersion for known-predicted rows only (the single unknown class is not
/// spread out).
inline Var aad_loss(const Tensor& features, Var logits, std::span<const std::size_t> batch_indices,
                    const MemoryBank& bank, const AadConfig& cfg, const RatioEstimate& ratio, bool weighted = true) {
  AadTerms terms = aad_terms(features, logits, batch_indices, bank, cfg);
  const std::size_t unknown = logits.value().cols() - 1;
  Tensor known_mask({terms.predictions.size()});
  for (std::size_t i = 0; i < terms.predictions.size(); ++i) known_mask[i] = terms.predictions[i] == unknown ? 0.0 : 1.0;
  Graph& g = logits.graph();
  Var per_row = add(add(terms.entropy, terms.attraction), mul(terms.dispersion, g.constant(std::move(known_mask))));
  const auto w = detail::partition_weights(terms.predictions, unknown, ratio, weighted);
  return weighted_sum(per_row, w);
}

}  // namespace onering
