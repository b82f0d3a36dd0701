#pragma once

#include <vector>

#include "ecgssl/tensor.hpp"

namespace ecgssl {

// Plain SGD. Kept for tests and as a reference update rule.
struct Sgd {
  explicit Sgd(real learning_rate);
  void step(std::vector<Tensor>& params);
  void zero_grad(std::vector<Tensor>& params);
  real lr;
};

// Adam with bias correction. Moment buffers are keyed by position, so the
// parameter list must be stable across steps.
struct Adam {
  explicit Adam(real learning_rate, real beta1 = 0.9, real beta2 = 0.999,
                real eps = 1e-8);
  void step(std::vector<Tensor>& params);
  void zero_grad(std::vector<Tensor>& params);

  real lr;
  real beta1, beta2, eps;
  int64_t t = 0;
  std::vector<std::vector<real>> m, v;
};

}  // namespace ecgssl
