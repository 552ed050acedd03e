#pragma once

// SGD with Nesterov momentum and L2 weight decay folded into the gradient:
//
//   g <- grad + wd * theta
//   v <- mu * v + g
//   theta <- theta - lr * (g + mu * v)

#include <map>
#include <span>
#include <string>
#include <vector>

#include "pgl/decoupled_net.hpp"

namespace pgl {

struct OptimizerState {
  double lr0 = 0.8;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::map<std::string, std::vector<float>> velocity;  // zero until first step
};

/// Steps exactly `params`; every one of them must have a gradient in `grads`.
inline void sgd_nesterov_step(std::span<const ParamRef> params, const GradMap<float>& grads, OptimizerState& state,
                              double lr) {
  const float mu = static_cast<float>(state.momentum);
  const float wd = static_cast<float>(state.weight_decay);
  const float step = static_cast<float>(lr);
  for (const auto& p : params) {
    const Tensor* g = grads.find(*p.tensor);
    if (!g) throw ContractError("no gradient for parameter " + p.name);
    if (g->shape() != p.tensor->shape())
      throw ShapeError("gradient shape " + to_string(g->shape()) + " does not match parameter " + p.name + " " +
                       to_string(p.tensor->shape()));
    auto theta = p.tensor->mutable_data();
    auto& v = state.velocity[p.name];
    if (v.empty()) v.assign(theta.size(), 0.0f);
    if (v.size() != theta.size()) throw ShapeError("velocity shape mismatch for " + p.name);
    const auto& gv = g->values();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      float gi = gv[i] + wd * theta[i];
      v[i] = mu * v[i] + gi;
      theta[i] -= step * (gi + mu * v[i]);
    }
  }
}

}  // namespace pgl
