/*
 * Copyright 2026 The fewshot Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "fewshot/parameter.hpp"

namespace fewshot {

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  Tensor<Scalar> m;
  Tensor<Scalar> v;
  long long step = 0;
};

// Decoupled decay (p *= 1 - lr * wd), then the bias-corrected Adam step.
template <typename Scalar>
void adamw_update(Tensor<Scalar>& param, const Tensor<Scalar>& grad, AdamState<Scalar>& state,
                  const AdamWConfig& cfg) {
  if (grad.shape() != param.shape())
    throw ShapeMismatch("adamw grad " + shape_str(grad.shape()) + " for param " +
                        shape_str(param.shape()));
  if (!state.m.defined()) {
    state.m = Tensor<Scalar>::zeros_like(param);
    state.v = Tensor<Scalar>::zeros_like(param);
  }
  if (state.m.shape() != param.shape() || state.v.shape() != param.shape())
    throw ShapeMismatch("adamw state does not match param " + shape_str(param.shape()));
  ++state.step;
  const auto lr = static_cast<Scalar>(cfg.lr);
  const auto b1 = static_cast<Scalar>(cfg.beta1);
  const auto b2 = static_cast<Scalar>(cfg.beta2);
  const auto eps = static_cast<Scalar>(cfg.eps);
  const auto bc1 = static_cast<Scalar>(1.0 - std::pow(cfg.beta1, double(state.step)));
  const auto bc2 = static_cast<Scalar>(1.0 - std::pow(cfg.beta2, double(state.step)));
  if (cfg.weight_decay != 0.0) param.flat() *= static_cast<Scalar>(1.0 - cfg.lr * cfg.weight_decay);
  auto m = state.m.flat().array();
  auto v = state.v.flat().array();
  const auto g = grad.flat().array();
  m = b1 * m + (Scalar(1) - b1) * g;
  v = b2 * v + (Scalar(1) - b2) * g.square();
  param.flat().array() -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
}

/// AdamW over named parameters. Frozen parameters are never touched; a
/// trainable parameter without a gradient is stepped with a zero gradient.
template <typename Scalar>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<ParamPtr<Scalar>>& params) {
    for (const auto& p : params) {
      if (!p->trainable()) continue;
      AdamState<Scalar>& st = state_[p->name];
      if (p->has_grad())
        adamw_update(p->value, p->grad, st, cfg_);
      else
        adamw_update(p->value, Tensor<Scalar>::zeros_like(p->value), st, cfg_);
    }
  }

  const AdamWConfig& config() const { return cfg_; }
  std::map<std::string, AdamState<Scalar>>& state() { return state_; }
  const std::map<std::string, AdamState<Scalar>>& state() const { return state_; }

 private:
  AdamWConfig cfg_;
  std::map<std::string, AdamState<Scalar>> state_;
};

}  // namespace fewshot
