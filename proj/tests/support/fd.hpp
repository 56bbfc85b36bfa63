#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "onering/autodiff.hpp"
#include "onering/memory_bank.hpp"
#include "onering/random.hpp"
#include "onering/tensor.hpp"

namespace onering::testing {

/// Builds a scalar loss. With `track` the closure binds the checked tensors
/// as parameters, otherwise as constants.
using LossBuilder = std::function<Var(Graph&, bool track)>;

inline Var bind(Graph& g, Tensor& t, bool track) { return track ? g.parameter(t) : g.constant(t); }

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

/// Largest relative error between backward() gradients and central
/// differences (step h) over every element of `params`.
inline double max_gradient_error(const std::vector<Tensor*>& params, const LossBuilder& build, double h = 1e-5) {
  for (Tensor* p : params) p->clear_grad();
  {
    Graph g;
    Var loss = build(g, true);
    g.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (Tensor* p : params) {
    const auto gr = p->grad();
    analytic.emplace_back(gr.begin(), gr.end());
    if (analytic.back().empty()) analytic.back().assign(p->size(), 0.0);
    p->clear_grad();
  }
  auto eval = [&] {
    Graph g;
    return build(g, false).item();
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k]->values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + h;
      const double up = eval();
      values[i] = orig - h;
      const double down = eval();
      values[i] = orig;
      worst = std::max(worst, relative_error(analytic[k][i], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

inline Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Tensor t({rows, cols});
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

inline Tensor random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  Tensor t({n});
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

/// Values bounded away from zero, for kinked ops.
inline Tensor away_from_zero(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (double& v : t.values()) {
    const double mag = 0.05 + std::abs(rng.normal());
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

/// Smallest gap between the top two entries of any row.
inline double min_top2_margin(const Tensor& logits) {
  double out = 1e300;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    double a = -1e300, b = -1e300;
    for (double v : logits.row(r)) {
      if (v > a) b = a, a = v;
      else if (v > b) b = v;
    }
    out = std::min(out, a - b);
  }
  return out;
}

/// Smallest cosine-similarity gap between the k-th and (k+1)-th bank
/// neighbor over the query rows (self excluded).
inline double min_knn_gap(const MemoryBank& bank, const Tensor& queries, std::span<const std::size_t> self,
                          std::size_t k) {
  double out = 1e300;
  for (std::size_t r = 0; r < queries.rows(); ++r) {
    const auto q = queries.row(r);
    double qn = 0.0;
    for (double v : q) qn += v * v;
    qn = std::sqrt(qn);
    std::vector<double> sim;
    for (std::size_t i = 0; i < bank.size(); ++i) {
      if (i == self[r]) continue;
      double d = 0.0;
      for (std::size_t j = 0; j < q.size(); ++j) d += q[j] * bank.features().at(i, j);
      sim.push_back(d / qn);
    }
    std::sort(sim.rbegin(), sim.rend());
    out = std::min(out, sim[k - 1] - sim[k]);
  }
  return out;
}

}  // namespace onering::testing
