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
#include <optional>
#include <string>
#include <vector>

#include "fewshot/adamw.hpp"
#include "fewshot/data.hpp"
#include "fewshot/encoder.hpp"
#include "fewshot/film.hpp"
#include "fewshot/objective.hpp"

namespace fewshot {

// Ablation rows. Each one fixes which loss terms are active and whether the
// augmentation weights are applied.
enum class Variant { full, lora_only, no_group_weights, distill_only, ent_only, bce_aug_only };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);

// A variant optionally paired with an augmentation count override, written
// "full" or "full:8".
struct VariantSpec {
  Variant variant = Variant::full;
  std::optional<Index> n_aug;

  std::string label() const;
};

VariantSpec parse_variant_spec(const std::string& text);

struct DataConfig {
  std::string train_path;  // JSONL corpus to sample the support set from; empty = synthetic
  std::string val_path;    // JSONL validation set; empty = synthetic
  SyntheticTaskSpec task;
  Index pool = 800;     // synthetic corpus size
  Index val_size = 400; // synthetic validation size
  Index k_shot = 15;
};

struct RunConfig {
  Index steps = 500;
  Index batch_size = 16;
  std::uint64_t seed = 0;
  Index eval_every = 50;
  Variant variant = Variant::full;
};

struct TrainConfig {
  EncoderConfig model;
  std::uint64_t backbone_seed = 0;  // draws the frozen "pretrained" weights
  FilmConfig augment;               // channels always follow model.width
  LossWeights loss;
  bool differentiate_weights = false;
  AdamWConfig optim;
  RunConfig run;
  DataConfig data;

  void validate() const;
};

// Loss settings a variant implies on top of the configured weights.
struct ResolvedObjective {
  bool use_film = true;
  LossWeights weights;
  ObjectiveOptions options;
};

ResolvedObjective resolve_objective(const TrainConfig& cfg);

// TOML-style sections of key = value lines. Unknown sections or keys raise
// ConfigError.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);

// Copies the model's classes, input_dim and tokens into the synthetic task
// and its width into the FiLM channel count.
void sync_data_shape(TrainConfig& cfg);

// Applies "section.key=value".
void apply_override(TrainConfig& cfg, const std::string& assignment);
void set_config_value(TrainConfig& cfg, const std::string& section, const std::string& key,
                      const std::string& value);

// Fully resolved config; parse_config(to_config_text(c)) reproduces c.
std::string to_config_text(const TrainConfig& cfg);

}  // namespace fewshot
