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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "fewshot/ops.hpp"
#include "fewshot/parameter.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

/// Low-rank update of a frozen projection: W = W0 + scale * B A.
///
/// W0 is d x k (stored [out, in]), A is r x k and B is d x r. Only A and B are
/// trainable.
template <typename Scalar>
struct LoraAdapter {
  ParamPtr<Scalar> base;  // W0
  ParamPtr<Scalar> a;
  ParamPtr<Scalar> b;
  Index rank = 0;
  Scalar scale = Scalar(1);

  Index out_features() const { return base->value.size(0); }
  Index in_features() const { return base->value.size(1); }

  // W0 + scale * B A, materialized.
  typename Tensor<Scalar>::RowMatrix dense() const {
    return base->value.matrix() + scale * b->value.matrix() * a->value.matrix();
  }
};

/// Wraps the frozen matrix `base` with freshly initialized factors named
/// `<prefix>.lora.A` and `<prefix>.lora.B`. A ~ N(0, 1/r), B = 0.
template <typename Scalar>
LoraAdapter<Scalar> init_lora(ParamPtr<Scalar> base, const std::string& prefix, Index rank,
                              Scalar scale, std::uint64_t seed) {
  if (base->trainable()) throw ConfigMismatch("LoRA base " + base->name + " must be frozen");
  const Index d = base->value.size(0);
  const Index k = base->value.size(1);
  if (rank < 1) throw RankTooLarge("rank must be at least 1");
  if (rank > std::min(d, k))
    throw RankTooLarge("rank " + std::to_string(rank) + " exceeds min(" + std::to_string(d) +
                       "," + std::to_string(k) + ")");
  if (!(scale > Scalar(0))) throw ConfigMismatch("LoRA scale must be positive");
  Rng rng(seed, "lora:" + prefix);
  LoraAdapter<Scalar> adapter;
  adapter.base = std::move(base);
  adapter.rank = rank;
  adapter.scale = scale;
  adapter.a = make_param(prefix + ".lora.A", ParamTag::lora,
                         rng.normal_tensor<Scalar>({rank, k}, 1.0 / std::sqrt(double(rank))));
  adapter.b = make_param(prefix + ".lora.B", ParamTag::lora, Tensor<Scalar>::zeros({d, rank}));
  return adapter;
}

/// Standalone adapter over a freshly drawn d x k frozen matrix.
template <typename Scalar>
LoraAdapter<Scalar> init_lora(Index d, Index k, Index rank, Scalar scale, std::uint64_t seed) {
  Rng rng(seed, "lora:base");
  auto base = make_param("W0", ParamTag::frozen,
                         rng.normal_tensor<Scalar>({d, k}, 1.0 / std::sqrt(double(k))));
  return init_lora(std::move(base), "adapter", rank, scale, seed);
}

// x W0^T + scale (x A^T) B^T; gradients reach A and B only.
template <typename Scalar>
Var<Scalar> lora_forward(const Var<Scalar>& x, const LoraAdapter<Scalar>& adapter) {
  if (x.dim() < 1 || x.shape().back() != adapter.in_features())
    throw ShapeMismatch("lora_forward input " + shape_str(x.shape()) + " for k=" +
                        std::to_string(adapter.in_features()));
  Graph<Scalar>& g = x.graph();
  const Var<Scalar> frozen = linear(x, g.parameter(adapter.base));
  const Var<Scalar> update = linear(linear(x, g.parameter(adapter.a)), g.parameter(adapter.b));
  return add(frozen, adapter.scale == Scalar(1) ? update : scale(update, adapter.scale));
}

}  // namespace fewshot
