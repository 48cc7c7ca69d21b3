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

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fewshot/tensor.hpp"

namespace fewshot {

// Which group a parameter belongs to. Only `frozen` parameters are excluded
// from optimization.
enum class ParamTag { frozen, lora, aug, head };

inline const char* tag_name(ParamTag tag) {
  switch (tag) {
    case ParamTag::frozen: return "frozen";
    case ParamTag::lora: return "lora";
    case ParamTag::aug: return "aug";
    case ParamTag::head: return "head";
  }
  return "?";
}

template <typename Scalar>
struct Parameter {
  std::string name;
  ParamTag tag = ParamTag::frozen;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;  // undefined until a backward pass reaches it

  bool trainable() const { return tag != ParamTag::frozen; }
  bool has_grad() const { return grad.defined(); }
  void zero_grad() { grad = Tensor<Scalar>(); }
};

template <typename Scalar>
using ParamPtr = std::shared_ptr<Parameter<Scalar>>;

template <typename Scalar>
ParamPtr<Scalar> make_param(std::string name, ParamTag tag, Tensor<Scalar> value) {
  auto p = std::make_shared<Parameter<Scalar>>();
  p->name = std::move(name);
  p->tag = tag;
  p->value = std::move(value);
  return p;
}

struct TrainableCounts {
  Index lora = 0;
  Index aug = 0;
  Index head = 0;
  Index total = 0;
};

/// Ordered, name-unique list of parameters shared with the modules that own them.
template <typename Scalar>
class ParameterRegistry {
 public:
  void add(ParamPtr<Scalar> p) {
    if (!p) throw ConfigMismatch("null parameter");
    if (index_.count(p->name)) throw DuplicateParameter(p->name);
    index_.emplace(p->name, params_.size());
    params_.push_back(std::move(p));
  }

  const std::vector<ParamPtr<Scalar>>& all() const { return params_; }

  std::vector<ParamPtr<Scalar>> trainable() const {
    std::vector<ParamPtr<Scalar>> out;
    for (const auto& p : params_)
      if (p->trainable()) out.push_back(p);
    return out;
  }

  std::vector<ParamPtr<Scalar>> with_tag(ParamTag tag) const {
    std::vector<ParamPtr<Scalar>> out;
    for (const auto& p : params_)
      if (p->tag == tag) out.push_back(p);
    return out;
  }

  ParamPtr<Scalar> find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second];
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  // Sets every parameter carrying `from` to `to`; used to freeze whole groups.
  void retag(ParamTag from, ParamTag to) {
    for (auto& p : params_)
      if (p->tag == from) p->tag = to;
  }

 private:
  std::vector<ParamPtr<Scalar>> params_;
  std::map<std::string, std::size_t> index_;
};

template <typename Scalar>
TrainableCounts count_trainable(const ParameterRegistry<Scalar>& registry) {
  TrainableCounts c;
  for (const auto& p : registry.all()) {
    const Index n = p->value.numel();
    switch (p->tag) {
      case ParamTag::lora: c.lora += n; break;
      case ParamTag::aug: c.aug += n; break;
      case ParamTag::head: c.head += n; break;
      case ParamTag::frozen: break;
    }
  }
  c.total = c.lora + c.aug + c.head;
  return c;
}

}  // namespace fewshot
