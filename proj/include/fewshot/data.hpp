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
#include <filesystem>
#include <string>
#include <vector>

#include "fewshot/tensor.hpp"

namespace fewshot {

/// One multi-label example: T' x input_dim token features and a binary
/// label vector with at least one positive.
struct Instance {
  std::string id;
  Tensor<float> features;
  std::vector<std::uint8_t> labels;

  std::vector<Index> label_indices() const;
  bool has_label(Index k) const { return k >= 0 && k < Index(labels.size()) && labels[k] != 0; }
};

struct SyntheticTaskSpec {
  Index classes = 8;
  Index input_dim = 32;
  Index tokens = 16;
  double signature_scale = 3.0;
  double noise_sigma = 0.5;
  double label_density = 1.5;  // expected positives per sample before the non-empty resample
  std::uint64_t seed = 0;

  void validate() const;
};

// K x input_dim unit-norm class signatures (orthonormal rows when
// input_dim >= K).
Eigen::MatrixXd class_signatures(const SyntheticTaskSpec& spec);

// Instances first_index .. first_index + n - 1 of the task. Instance i only
// depends on (spec, i), so disjoint ranges form disjoint splits.
std::vector<Instance> gen_synthetic(const SyntheticTaskSpec& spec, Index n, Index first_index = 0);

struct SamplerConfig {
  Index k_shot = 15;
  std::uint64_t seed = 0;
};

struct SupportSet {
  std::vector<std::size_t> indices;  // into the source corpus, in insertion order
  std::vector<Index> counts;         // per-class positives in the support set
  std::vector<Index> available;      // per-class positives in the corpus
  std::vector<Index> empty_classes;  // classes with no instance at all
  std::vector<std::string> warnings; // classes that ended below k_shot

  std::vector<Instance> gather(const std::vector<Instance>& corpus) const;
};

/// Greedy multi-label K-shot selection. Classes are visited in a seeded
/// random order; an under-filled class draws unused instances carrying it
/// (seeded order) until it reaches k_shot or runs out. Each insertion counts
/// toward every label of the instance, so co-occurring classes may overshoot.
SupportSet kshot_sample(const std::vector<Instance>& corpus, const SamplerConfig& cfg);

// Writes per-class counts as CSV: class_id,available,selected
void write_counts_csv(const SupportSet& support, const std::filesystem::path& path);

// One object per line: {"id": str, "labels": [int], "features": [[float]]}.
void export_jsonl(const std::vector<Instance>& instances, const std::filesystem::path& path);
std::string to_jsonl_line(const Instance& inst);

// `classes` fixes the label vector length; 0 infers it as max label + 1.
std::vector<Instance> import_jsonl(const std::filesystem::path& path, Index classes = 0);

Index infer_classes(const std::vector<Instance>& instances);

// Stacks the selected instances into tokens [B, T', D] and labels [B, K].
template <typename Scalar>
void make_batch(const std::vector<Instance>& instances, const std::vector<std::size_t>& rows,
                Tensor<Scalar>& tokens, Tensor<Scalar>& labels) {
  if (rows.empty()) throw ShapeMismatch("empty batch");
  const Instance& first = instances.at(rows.front());
  const Index t = first.features.size(0);
  const Index d = first.features.size(1);
  const Index k = static_cast<Index>(first.labels.size());
  const Index b = static_cast<Index>(rows.size());
  tokens = Tensor<Scalar>({b, t, d});
  labels = Tensor<Scalar>({b, k});
  for (Index r = 0; r < b; ++r) {
    const Instance& inst = instances.at(rows[r]);
    if (inst.features.shape() != first.features.shape() || Index(inst.labels.size()) != k)
      throw ShapeMismatch("instance " + inst.id + " does not match batch layout");
    tokens.flat().segment(r * t * d, t * d) = inst.features.flat().template cast<Scalar>();
    for (Index c = 0; c < k; ++c) labels[r * k + c] = inst.labels[c] ? Scalar(1) : Scalar(0);
  }
}

}  // namespace fewshot
