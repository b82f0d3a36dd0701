#include "ecgssl/optim.hpp"

#include <cmath>

namespace ecgssl {

namespace {
void check_lr(real lr) {
  if (!(lr > 0.0)) throw ValueError("optimizer: learning rate must be > 0");
}
}  // namespace

Sgd::Sgd(real learning_rate) : lr(learning_rate) { check_lr(lr); }

void Sgd::step(std::vector<Tensor>& params) {
  for (Tensor& p : params) {
    if (!p.has_grad()) continue;
    const auto& g = p.grad();
    auto& d = p.mutable_data();
    for (size_t i = 0; i < d.size(); ++i) d[i] -= lr * g[i];
  }
}

void Sgd::zero_grad(std::vector<Tensor>& params) {
  for (Tensor& p : params) p.zero_grad();
}

Adam::Adam(real learning_rate, real b1, real b2, real e)
    : lr(learning_rate), beta1(b1), beta2(b2), eps(e) {
  check_lr(lr);
}

void Adam::step(std::vector<Tensor>& params) {
  if (m.empty()) {
    m.resize(params.size());
    v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m[i].assign(params[i].data().size(), 0.0);
      v[i].assign(params[i].data().size(), 0.0);
    }
  }
  if (m.size() != params.size())
    throw ValueError("adam: parameter list changed size between steps");
  ++t;
  const real bc1 = 1.0 - std::pow(beta1, static_cast<real>(t));
  const real bc2 = 1.0 - std::pow(beta2, static_cast<real>(t));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.has_grad()) continue;
    const auto& g = p.grad();
    auto& d = p.mutable_data();
    auto& mi = m[i];
    auto& vi = v[i];
    for (size_t j = 0; j < d.size(); ++j) {
      mi[j] = beta1 * mi[j] + (1.0 - beta1) * g[j];
      vi[j] = beta2 * vi[j] + (1.0 - beta2) * g[j] * g[j];
      const real mhat = mi[j] / bc1;
      const real vhat = vi[j] / bc2;
      d[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void Adam::zero_grad(std::vector<Tensor>& params) {
  for (Tensor& p : params) p.zero_grad();
}

}  // namespace ecgssl
