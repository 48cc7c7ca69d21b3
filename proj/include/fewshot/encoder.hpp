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
#include <optional>
#include <string>
#include <vector>

#include "fewshot/film.hpp"
#include "fewshot/lora.hpp"
#include "fewshot/ops.hpp"
#include "fewshot/parameter.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

enum class HeadMode { frozen_prototype, trainable_linear };

struct EncoderConfig {
  Index layers = 6;
  Index width = 64;
  Index heads = 4;
  Index tokens = 16;   // T'
  Index l_aug = 3;     // FiLM applied to the output of this block
  Index l_lora = 3;    // first block with LoRA on W_q, W_v
  Index rank = 4;
  Index classes = 8;
  Index input_dim = 32;
  double lora_scale = 1.0;
  HeadMode head = HeadMode::frozen_prototype;

  void validate() const {
    const auto fail = [](const std::string& m) { throw ConfigMismatch(m); };
    if (layers < 1 || width < 1 || heads < 1 || tokens < 1 || classes < 1 || input_dim < 1)
      fail("encoder sizes must be positive");
    if (width % heads != 0) fail("heads must divide width");
    if (l_aug < 0 || l_aug >= layers) fail("l_aug must lie in [0, layers)");
    if (l_lora < 0 || l_lora >= layers) fail("l_lora must lie in [0, layers)");
    if (rank < 1 || rank > width) throw RankTooLarge("rank " + std::to_string(rank));
    if (!(lora_scale > 0.0)) fail("lora_scale must be positive");
  }
};

template <typename Scalar>
struct PredictionBundle {
  Var<Scalar> z_orig;              // [B, K]
  std::vector<Var<Scalar>> z_aug;  // N x [B, K]
};

// Frozen dense projection, optionally carrying a LoRA update that shares its W0.
template <typename Scalar>
struct Projection {
  ParamPtr<Scalar> weight;
  ParamPtr<Scalar> bias;
  std::optional<LoraAdapter<Scalar>> lora;
};

template <typename Scalar>
Var<Scalar> project(const Var<Scalar>& x, const Projection<Scalar>& p) {
  Graph<Scalar>& g = x.graph();
  const Var<Scalar> y = p.lora ? lora_forward(x, *p.lora) : linear(x, g.parameter(p.weight));
  return add(y, g.parameter(p.bias));
}

template <typename Scalar>
struct AttentionBlock {
  ParamPtr<Scalar> ln1_gamma, ln1_beta;
  Projection<Scalar> q, k, v, o;
  ParamPtr<Scalar> ln2_gamma, ln2_beta;
  Projection<Scalar> fc1, fc2;
};

template <typename Scalar>
struct ClassifierHead {
  ParamPtr<Scalar> prototypes;  // [K, C]
  HeadMode mode = HeadMode::frozen_prototype;
};

// mean over tokens, then dot with every class prototype.
template <typename Scalar>
Var<Scalar> pool_and_classify(const Var<Scalar>& features, const ClassifierHead<Scalar>& head) {
  const Index c = head.prototypes->value.size(1);
  if (features.dim() != 3 || features.shape()[2] != c)
    throw ShapeMismatch("pool_and_classify features " + shape_str(features.shape()) +
                        " for width " + std::to_string(c));
  return matmul(mean(features, {1}), features.graph().parameter(head.prototypes), true);
}

/// Pre-LN transformer encoder with a frozen backbone, LoRA on W_q/W_v from
/// block l_lora onward, and a FiLM insertion point after block l_aug.
///
/// Frozen weights are drawn from `backbone_seed`; LoRA factors from
/// `adapter_seed`.
template <typename Scalar>
class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, std::uint64_t backbone_seed, std::uint64_t adapter_seed)
      : cfg_(cfg), backbone_seed_(backbone_seed) {
    cfg.validate();
    const Index c = cfg.width;
    input_ = dense("input", c, cfg.input_dim);
    for (Index i = 0; i < cfg.layers; ++i) {
      const std::string pre = "blocks." + std::to_string(i);
      AttentionBlock<Scalar> blk;
      blk.ln1_gamma = frozen(pre + ".ln1.g", Tensor<Scalar>::ones({c}));
      blk.ln1_beta = frozen(pre + ".ln1.b", Tensor<Scalar>::zeros({c}));
      blk.q = dense(pre + ".attn.q", c, c);
      blk.k = dense(pre + ".attn.k", c, c);
      blk.v = dense(pre + ".attn.v", c, c);
      blk.o = dense(pre + ".attn.o", c, c);
      blk.ln2_gamma = frozen(pre + ".ln2.g", Tensor<Scalar>::ones({c}));
      blk.ln2_beta = frozen(pre + ".ln2.b", Tensor<Scalar>::zeros({c}));
      blk.fc1 = dense(pre + ".mlp.fc1", 4 * c, c);
      blk.fc2 = dense(pre + ".mlp.fc2", c, 4 * c);
      if (i >= cfg.l_lora) {
        const auto s = static_cast<Scalar>(cfg.lora_scale);
        blk.q.lora = init_lora(blk.q.weight, pre + ".attn.q", cfg.rank, s, adapter_seed);
        blk.v.lora = init_lora(blk.v.weight, pre + ".attn.v", cfg.rank, s, adapter_seed);
        registry_.add(blk.q.lora->a);
        registry_.add(blk.q.lora->b);
        registry_.add(blk.v.lora->a);
        registry_.add(blk.v.lora->b);
      }
      blocks_.push_back(std::move(blk));
    }
    Tensor<Scalar> protos = Rng(backbone_seed, "backbone:head.P").normal_tensor<Scalar>(
        {cfg.classes, c});
    protos.matrix().rowwise().normalize();
    head_.mode = cfg.head;
    head_.prototypes = make_param(
        "head.P", cfg.head == HeadMode::trainable_linear ? ParamTag::head : ParamTag::frozen,
        std::move(protos));
    registry_.add(head_.prototypes);
  }

  Encoder(const Encoder&) = delete;
  Encoder& operator=(const Encoder&) = delete;

  const EncoderConfig& config() const { return cfg_; }
  const ParameterRegistry<Scalar>& registry() const { return registry_; }
  ParameterRegistry<Scalar>& registry() { return registry_; }
  const std::vector<AttentionBlock<Scalar>>& blocks() const { return blocks_; }
  const ClassifierHead<Scalar>& head() const { return head_; }

  // Tokens [B, T', input_dim] through the input projection and blocks [0, last].
  Var<Scalar> embed_through(Graph<Scalar>& g, const Tensor<Scalar>& tokens, Index last) const {
    if (tokens.dim() != 3 || tokens.shape()[2] != cfg_.input_dim)
      throw ShapeMismatch("tokens " + shape_str(tokens.shape()) + " for input_dim " +
                          std::to_string(cfg_.input_dim));
    Var<Scalar> h = project(g.constant(tokens), input_);
    return run_blocks(h, 0, last);
  }

  // Blocks [first, last] inclusive.
  Var<Scalar> run_blocks(Var<Scalar> h, Index first, Index last) const {
    for (Index i = first; i <= last; ++i) h = block_forward(h, blocks_[i]);
    return h;
  }

  Var<Scalar> classify(const Var<Scalar>& features) const {
    return pool_and_classify(features, head_);
  }

  /// Original logits plus one continuation per augmentation. All
  /// continuations share the same LoRA parameters.
  PredictionBundle<Scalar> encode(Graph<Scalar>& g, const Tensor<Scalar>& tokens,
                                  const FilmAugmentor<Scalar>* film = nullptr) const {
    if (film && film->channels() != cfg_.width)
      throw ConfigMismatch("FiLM width " + std::to_string(film->channels()) + " vs encoder " +
                           std::to_string(cfg_.width));
    const Var<Scalar> f = embed_through(g, tokens, cfg_.l_aug);
    PredictionBundle<Scalar> bundle;
    bundle.z_orig = classify(run_blocks(f, cfg_.l_aug + 1, cfg_.layers - 1));
    if (film) {
      for (const Var<Scalar>& fa : augment_all(*film, f))
        bundle.z_aug.push_back(classify(run_blocks(fa, cfg_.l_aug + 1, cfg_.layers - 1)));
    }
    return bundle;
  }

  // Logits without any augmentation, as plain values.
  Tensor<Scalar> logits(const Tensor<Scalar>& tokens) const {
    Graph<Scalar> g;
    return encode(g, tokens).z_orig.value();
  }

 private:
  Var<Scalar> block_forward(const Var<Scalar>& h, const AttentionBlock<Scalar>& blk) const {
    Graph<Scalar>& g = h.graph();
    const Index b = h.shape()[0];
    const Index t = h.shape()[1];
    const Index c = cfg_.width;
    const Index nh = cfg_.heads;
    const Index dh = c / nh;
    const auto split = [&](const Var<Scalar>& x) {
      return permute(reshape(x, {b, t, nh, dh}), {0, 2, 1, 3});
    };
    const Var<Scalar> a = layer_norm(h, g.parameter(blk.ln1_gamma), g.parameter(blk.ln1_beta));
    const Var<Scalar> q = split(project(a, blk.q));
    const Var<Scalar> k = split(project(a, blk.k));
    const Var<Scalar> v = split(project(a, blk.v));
    const Var<Scalar> attn = softmax_last(
        scale(batched_matmul(q, k, true), Scalar(1) / std::sqrt(static_cast<Scalar>(dh))));
    const Var<Scalar> ctx = reshape(permute(batched_matmul(attn, v), {0, 2, 1, 3}), {b, t, c});
    const Var<Scalar> h1 = add(h, project(ctx, blk.o));
    const Var<Scalar> m = layer_norm(h1, g.parameter(blk.ln2_gamma), g.parameter(blk.ln2_beta));
    return add(h1, project(gelu(project(m, blk.fc1)), blk.fc2));
  }

  ParamPtr<Scalar> frozen(const std::string& name, Tensor<Scalar> value) {
    auto p = make_param(name, ParamTag::frozen, std::move(value));
    registry_.add(p);
    return p;
  }

  Projection<Scalar> dense(const std::string& name, Index out, Index in) {
    Rng rng(backbone_seed_, "backbone:" + name);
    Projection<Scalar> p;
    p.weight = frozen(name + ".W", rng.normal_tensor<Scalar>({out, in}, 1.0 / std::sqrt(double(in))));
    p.bias = frozen(name + ".b", rng.normal_tensor<Scalar>({out}, 0.02));
    return p;
  }

  EncoderConfig cfg_;
  std::uint64_t backbone_seed_;
  ParameterRegistry<Scalar> registry_;
  Projection<Scalar> input_;
  std::vector<AttentionBlock<Scalar>> blocks_;
  ClassifierHead<Scalar> head_;
};

}  // namespace fewshot
