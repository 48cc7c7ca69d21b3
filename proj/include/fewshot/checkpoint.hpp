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

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fewshot/tensor.hpp"

namespace fewshot {

struct TensorRecord {
  std::string name;
  DType dtype = DType::f64;
  Shape shape;
  std::vector<unsigned char> bytes;  // little-endian scalars, row-major
};

/// A checkpoint directory holds `manifest.json` (tensor table, step, RNG
/// position, metrics, config snapshot) and `tensors.bin` (all tensor bytes
/// back to back in manifest order).
///
/// The training RNG is counter-based, so its state is the pair
/// (seed, counter).
struct Checkpoint {
  std::vector<TensorRecord> tensors;
  long long step = 0;
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_counter = 0;
  std::map<std::string, double> metrics;
  std::map<std::string, long long> counters;
  std::string config_text;

  const TensorRecord* find(const std::string& name) const;

  template <typename Scalar>
  void put(const std::string& name, const Tensor<Scalar>& t);

  // Throws CheckpointError if the entry is missing or its dtype or shape
  // differs from `expected`.
  template <typename Scalar>
  Tensor<Scalar> get(const std::string& name, const Shape& expected) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

namespace detail {

void to_little_endian(unsigned char* bytes, std::size_t count, std::size_t width);

}  // namespace detail

template <typename Scalar>
void Checkpoint::put(const std::string& name, const Tensor<Scalar>& t) {
  if (find(name)) throw CheckpointError("duplicate checkpoint entry " + name);
  TensorRecord rec;
  rec.name = name;
  rec.dtype = dtype_of<Scalar>();
  rec.shape = t.shape();
  rec.bytes.resize(static_cast<std::size_t>(t.numel()) * sizeof(Scalar));
  if (!rec.bytes.empty()) std::memcpy(rec.bytes.data(), t.data(), rec.bytes.size());
  detail::to_little_endian(rec.bytes.data(), static_cast<std::size_t>(t.numel()), sizeof(Scalar));
  tensors.push_back(std::move(rec));
}

template <typename Scalar>
Tensor<Scalar> Checkpoint::get(const std::string& name, const Shape& expected) const {
  const TensorRecord* rec = find(name);
  if (!rec) throw CheckpointError("checkpoint has no entry " + name);
  if (rec->dtype != dtype_of<Scalar>())
    throw CheckpointError(name + ": stored as " + dtype_name(rec->dtype) + ", expected " +
                          dtype_name(dtype_of<Scalar>()));
  if (rec->shape != expected)
    throw CheckpointError(name + ": stored shape " + shape_str(rec->shape) + ", model expects " +
                          shape_str(expected));
  Tensor<Scalar> t(expected);
  std::vector<unsigned char> bytes = rec->bytes;
  detail::to_little_endian(bytes.data(), static_cast<std::size_t>(t.numel()), sizeof(Scalar));
  if (!bytes.empty()) std::memcpy(t.data(), bytes.data(), bytes.size());
  return t;
}

}  // namespace fewshot
