#pragma once

#include <cstddef>
#include <span>
#include <unordered_map>
#include <vector>

#include "onering/error.hpp"
#include "onering/tensor.hpp"

namespace onering {

/// SGD with heavy-ball momentum: v = momentum * v + g; p -= lr * v.
/// Velocity is keyed by parameter address, so the same optimizer must be
/// used with a stable parameter set.
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {
    if (!(lr > 0.0)) throw Error(ErrorKind::InvalidConfig, "learning rate must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw Error(ErrorKind::InvalidConfig, "momentum must be in [0, 1)");
  }

  double lr() const { return lr_; }
  double momentum() const { return momentum_; }

  /// Applies one update and clears the gradients of every stepped parameter.
  /// Parameters without a gradient are treated as having a zero gradient.
  void step(std::span<Tensor* const> params) {
    for (Tensor* p : params) {
      auto& velocity = velocity_[p];
      if (velocity.empty()) velocity.assign(p->size(), 0.0);
      const auto grad = p->grad();
      auto values = p->values();
      for (std::size_t i = 0; i < values.size(); ++i) {
        velocity[i] = momentum_ * velocity[i] + (grad.empty() ? 0.0 : grad[i]);
        values[i] -= lr_ * velocity[i];
      }
      p->clear_grad();
    }
  }

 private:
  double lr_;
  double momentum_;
  std::unordered_map<const Tensor*, std::vector<double>> velocity_;
};

/// One-shot step without persistent velocity (momentum applies to a zero
/// initial velocity, so this is plain gradient descent).
inline void sgd_step(std::span<Tensor* const> params, double lr, double momentum = 0.0) {
  SgdMomentum opt(lr, momentum);
  opt.step(params);
}

}  // namespace onering
