#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "onering/autodiff.hpp"
#include "onering/error.hpp"
#include "onering/tensor.hpp"

namespace onering {

/// Per-target-sample cache of L2-normalized features and softmax predictions.
class MemoryBank {
 public:
  MemoryBank(std::size_t n_samples, std::size_t feature_dim, std::size_t n_classes)
      : features_({n_samples, feature_dim}), predictions_({n_samples, n_classes}), staleness_(n_samples, 0) {
    if (n_classes < 2 || feature_dim < 1) throw Error(ErrorKind::InvalidConfig, "memory bank dimensions too small");
  }

  std::size_t size() const { return staleness_.size(); }
  std::size_t feature_dim() const { return features_.cols(); }
  std::size_t n_classes() const { return predictions_.cols(); }

  const Tensor& features() const { return features_; }
  const Tensor& predictions() const { return predictions_; }
  std::span<const std::size_t> staleness() const { return staleness_; }

  /// Writes rows for `indices`. Features are stored L2-normalized,
  /// `predictions` (softmax rows) as given. Every row not written ages by one.
  void update(std::span<const std::size_t> indices, const Tensor& features, const Tensor& predictions) {
    if (features.rows() != indices.size() || predictions.rows() != indices.size()) {
      throw Error(ErrorKind::InvalidShape, "memory bank update: row count mismatch");
    }
    if (features.cols() != feature_dim() || predictions.cols() != n_classes()) {
      throw Error(ErrorKind::InvalidShape, "memory bank update: column count mismatch");
    }
    for (std::size_t i = 0; i < predictions.rows(); ++i) {
      const auto p = predictions.row(i);
      const double total = std::accumulate(p.begin(), p.end(), 0.0);
      if (std::abs(total - 1.0) > 1e-9) {
        throw Error(ErrorKind::InvalidShape, "memory bank update: prediction row is not a distribution");
      }
    }
    for (std::size_t idx : indices) {
      if (idx >= size()) {
        throw Error(ErrorKind::IndexOutOfRange,
                    "memory bank index " + std::to_string(idx) + " >= " + std::to_string(size()));
      }
    }
    for (auto& s : staleness_) ++s;
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const std::size_t idx = indices[i];
      const auto src = features.row(i);
      double norm = 0.0;
      for (double v : src) norm += v * v;
      norm = std::sqrt(norm);
      auto dst = features_.row(idx);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] = norm > 0.0 ? src[j] / norm : 0.0;
      const auto p = predictions.row(i);
      std::copy(p.begin(), p.end(), predictions_.row(idx).begin());
      staleness_[idx] = 0;
    }
  }

  /// Indices of the k most cosine-similar bank rows to `query`, excluding
  /// `self` when given. Ties resolve to the lower index.
  std::vector<std::size_t> knn(std::span<const double> query, std::size_t k,
                               std::optional<std::size_t> self = std::nullopt) const {
    if (query.size() != feature_dim()) throw Error(ErrorKind::InvalidShape, "knn query has wrong width");
    if (k < 1 || k >= size()) {
      throw Error(ErrorKind::InvalidConfig,
                  "knn needs 1 <= k < bank size (k=" + std::to_string(k) + ", size=" + std::to_string(size()) + ")");
    }
    double qnorm = 0.0;
    for (double v : query) qnorm += v * v;
    qnorm = std::sqrt(qnorm);
    std::vector<double> sim(size());
    for (std::size_t i = 0; i < size(); ++i) {
      const auto row = features_.row(i);
      double d = 0.0;
      for (std::size_t j = 0; j < row.size(); ++j) d += row[j] * query[j];
      sim[i] = qnorm > 0.0 ? d / qnorm : 0.0;
    }
    std::vector<std::size_t> order;
    order.reserve(size());
    for (std::size_t i = 0; i < size(); ++i)
      if (!self || *self != i) order.push_back(i);
    const std::size_t take = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [&sim](std::size_t a, std::size_t b) { return sim[a] != sim[b] ? sim[a] > sim[b] : a < b; });
    order.resize(take);
    return order;
  }

 private:
  Tensor features_;
  Tensor predictions_;
  std::vector<std::size_t> staleness_;
};

}  // namespace onering
