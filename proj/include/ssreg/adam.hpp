#pragma once

#include <cmath>

#include "ssreg/common.hpp"
#include "ssreg/params.hpp"

namespace ssreg {

// Adam with bias correction. Weight decay enters as an additive lambda*theta
// term in the gradient (classic L2).
template <typename Scalar>
struct AdamState {
  ParamStore<Scalar> m;
  ParamStore<Scalar> v;
  long t = 0;
  double lr = 1e-4;
  double weight_decay = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState init(const ParamStore<Scalar>& params, double lr, double weight_decay) {
    AdamState s;
    s.m = params.zeros_like();
    s.v = params.zeros_like();
    s.lr = lr;
    s.weight_decay = weight_decay;
    return s;
  }
};

template <typename Scalar>
void adam_step(ParamStore<Scalar>& params, const ParamStore<Scalar>& grads,
               AdamState<Scalar>& state) {
  if (!params.congruent(grads) || !params.congruent(state.m))
    throw ConfigError("adam_step: params/grads/state are not shape-congruent");
  grads.check_finite("adam_step");

  state.t += 1;
  const Scalar b1 = static_cast<Scalar>(state.beta1);
  const Scalar b2 = static_cast<Scalar>(state.beta2);
  const Scalar corr1 = Scalar(1) - static_cast<Scalar>(std::pow(state.beta1, state.t));
  const Scalar corr2 = Scalar(1) - static_cast<Scalar>(std::pow(state.beta2, state.t));
  const Scalar lr = static_cast<Scalar>(state.lr);
  const Scalar wd = static_cast<Scalar>(state.weight_decay);
  const Scalar eps = static_cast<Scalar>(state.eps);

  for (std::size_t i = 0; i < params.arrays.size(); ++i) {
    auto& theta = params.arrays[i].values;
    auto& m = state.m.arrays[i].values;
    auto& v = state.v.arrays[i].values;
    const VectorX<Scalar> g = grads.arrays[i].values + wd * theta;
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    const VectorX<Scalar> m_hat = m / corr1;
    const VectorX<Scalar> v_hat = v / corr2;
    theta -= lr * (m_hat.array() / (v_hat.array().sqrt() + eps)).matrix();
  }
}

}  // namespace ssreg
