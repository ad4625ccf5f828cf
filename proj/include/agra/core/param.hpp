#pragma once

#include <cmath>
#include <string>

#include "agra/core/rng.hpp"
#include "agra/core/tensor.hpp"

namespace agra {

// A named trainable tensor with a persistent gradient accumulator.
// Gradients are summed across backward passes until the optimizer consumes
// and clears them.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Param() = default;
  Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {}

  void ensure_grad() {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
  }

  void zero_grad() {
    if (!grad.empty()) grad.fill(0.0);
  }
};

// Xavier/Glorot uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
// Variance-preserving for linear/symmetric activations; use it on output
// layers that feed a loss directly.
inline void init_xavier_uniform(Param& p, int fan_in, int fan_out, Rng& rng) {
  double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (int64_t i = 0; i < p.value.size(); ++i) p.value[i] = rng.uniform(-a, a);
}

// He uniform: U(-a, a) with a = sqrt(6 / fan_in), the gain-2 companion for
// layers followed by ReLU. Xavier shrinks activations badly when fan_out
// far exceeds fan_in, which stacks up to dead features in deep ReLU chains.
inline void init_he_uniform(Param& p, int fan_in, Rng& rng) {
  double a = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < p.value.size(); ++i) p.value[i] = rng.uniform(-a, a);
}

}  // namespace agra
