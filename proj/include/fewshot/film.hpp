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
#include <cstdint>
#include <string>
#include <vector>

#include "fewshot/ops.hpp"
#include "fewshot/parameter.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

struct FilmConfig {
  Index n = 8;        // number of learned augmentations
  Index d_e = 32;     // embedding width
  Index hidden = 64;  // generator hidden width
  Index channels = 64;
};

template <typename Scalar>
struct FilmParams {
  Var<Scalar> gamma;  // [C]
  Var<Scalar> beta;   // [C]
  Index index = 0;
};

/// Learned feature augmentation: an embedding table E (N x De) and a
/// two-layer generator De -> hidden -> 2C that maps each row e_i to a
/// per-channel affine (gamma_i, beta_i).
///
/// The generator's output layer starts at zero and gamma is read as
/// 1 + raw, so every augmentation is the identity at construction.
template <typename Scalar>
class FilmAugmentor {
 public:
  FilmAugmentor(const FilmConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.n < 1 || cfg.d_e < 1 || cfg.hidden < 1 || cfg.channels < 1)
      throw ConfigMismatch("FiLM sizes must be positive");
    Rng rng(seed, "film");
    embedding_ = make_param("film.E", ParamTag::aug, rng.normal_tensor<Scalar>({cfg.n, cfg.d_e}));
    hidden_w_ = make_param("film.mlp.0.W", ParamTag::aug,
                           rng.normal_tensor<Scalar>({cfg.hidden, cfg.d_e},
                                                     1.0 / std::sqrt(double(cfg.d_e))));
    hidden_b_ = make_param("film.mlp.0.b", ParamTag::aug, Tensor<Scalar>::zeros({cfg.hidden}));
    out_w_ = make_param("film.mlp.1.W", ParamTag::aug,
                        Tensor<Scalar>::zeros({2 * cfg.channels, cfg.hidden}));
    out_b_ = make_param("film.mlp.1.b", ParamTag::aug, Tensor<Scalar>::zeros({2 * cfg.channels}));
  }

  const FilmConfig& config() const { return cfg_; }
  Index count() const { return cfg_.n; }
  Index channels() const { return cfg_.channels; }

  std::vector<ParamPtr<Scalar>> parameters() const {
    return {embedding_, hidden_w_, hidden_b_, out_w_, out_b_};
  }

  void register_into(ParameterRegistry<Scalar>& registry) const {
    for (const auto& p : parameters()) registry.add(p);
  }

  const ParamPtr<Scalar>& embedding() const { return embedding_; }
  const ParamPtr<Scalar>& hidden_weight() const { return hidden_w_; }
  const ParamPtr<Scalar>& hidden_bias() const { return hidden_b_; }
  const ParamPtr<Scalar>& out_weight() const { return out_w_; }
  const ParamPtr<Scalar>& out_bias() const { return out_b_; }

 private:
  FilmConfig cfg_;
  ParamPtr<Scalar> embedding_;
  ParamPtr<Scalar> hidden_w_, hidden_b_;
  ParamPtr<Scalar> out_w_, out_b_;
};

// (gamma_i, beta_i) = g(e_i), recorded on `g`.
template <typename Scalar>
FilmParams<Scalar> film_params(Graph<Scalar>& g, const FilmAugmentor<Scalar>& aug, Index i) {
  if (i < 0 || i >= aug.count())
    throw IndexOutOfRange("augmentation " + std::to_string(i) + " of " +
                          std::to_string(aug.count()));
  const Index c = aug.channels();
  const Var<Scalar> e = select(g.parameter(aug.embedding()), i);
  const Var<Scalar> h =
      gelu(linear(e, g.parameter(aug.hidden_weight()), g.parameter(aug.hidden_bias())));
  const Var<Scalar> raw = linear(h, g.parameter(aug.out_weight()), g.parameter(aug.out_bias()));
  return {add_scalar(narrow(raw, 0, 0, c), Scalar(1)), narrow(raw, 0, c, c), i};
}

// gamma * f + beta, broadcast over every axis but the last.
template <typename Scalar>
Var<Scalar> film_apply(const Var<Scalar>& features, const FilmParams<Scalar>& p) {
  const Index c = p.gamma.shape().back();
  if (features.dim() < 1 || features.shape().back() != c || p.beta.shape() != p.gamma.shape())
    throw ShapeMismatch("film_apply features " + shape_str(features.shape()) + " with gamma " +
                        shape_str(p.gamma.shape()));
  return add(mul(features, p.gamma), p.beta);
}

// The N modulated copies of `features`; `features` itself is left untouched.
template <typename Scalar>
std::vector<Var<Scalar>> augment_all(const FilmAugmentor<Scalar>& aug,
                                     const Var<Scalar>& features) {
  if (features.dim() < 1 || features.shape().back() != aug.channels())
    throw ShapeMismatch("augment_all features " + shape_str(features.shape()) + " for C=" +
                        std::to_string(aug.channels()));
  std::vector<Var<Scalar>> out;
  out.reserve(aug.count());
  for (Index i = 0; i < aug.count(); ++i)
    out.push_back(film_apply(features, film_params(features.graph(), aug, i)));
  return out;
}

}  // namespace fewshot
