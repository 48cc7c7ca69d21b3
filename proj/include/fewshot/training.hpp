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
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fewshot/adamw.hpp"
#include "fewshot/checkpoint.hpp"
#include "fewshot/config.hpp"
#include "fewshot/data.hpp"
#include "fewshot/encoder.hpp"
#include "fewshot/film.hpp"
#include "fewshot/metrics.hpp"
#include "fewshot/objective.hpp"

namespace fewshot {

// Training runs in single precision; the gradient suite uses double.
using Real = float;

struct Datasets {
  std::vector<Instance> train;  // the K-shot support set
  std::vector<Instance> val;
  SupportSet selection;         // how `train` was drawn from the corpus
};

// Builds the corpus (synthetic or JSONL), draws the support set with the run
// seed and loads or generates the validation split.
Datasets prepare_data(const TrainConfig& cfg);

/// Everything a training step mutates. LoRA factors, FiLM parameters, the
/// sampler and the batch order all derive from run.seed; frozen weights from
/// backbone_seed.
class TrainingState {
 public:
  explicit TrainingState(const TrainConfig& cfg);

  const TrainConfig& config() const { return cfg_; }
  const ResolvedObjective& objective() const { return objective_; }
  const Encoder<Real>& encoder() const { return *encoder_; }
  const FilmAugmentor<Real>* film() const { return film_.get(); }
  const ParameterRegistry<Real>& params() const { return params_; }
  ParameterRegistry<Real>& params() { return params_; }
  AdamW<Real>& optimizer() { return optim_; }
  const AdamW<Real>& optimizer() const { return optim_; }
  TrainableCounts trainable_counts() const { return count_trainable(params_); }

  long long step = 0;
  double best_map = -1.0;
  long long best_step = -1;
  double initial_map = -1.0;

 private:
  TrainConfig cfg_;
  ResolvedObjective objective_;
  std::unique_ptr<Encoder<Real>> encoder_;
  std::unique_ptr<FilmAugmentor<Real>> film_;
  ParameterRegistry<Real> params_;
  AdamW<Real> optim_;
};

// Rows of the support set used at `step` (1-based).
std::vector<std::size_t> batch_rows(const TrainConfig& cfg, long long step, std::size_t n_train);

/// One forward over 1 + N continuations, one backward and one AdamW update
/// of the trainable groups. NonFinite errors name the failing component.
LossReport<Real> train_step(TrainingState& state, const Tensor<Real>& tokens,
                            const Tensor<Real>& labels);

// Un-augmented validation mAP, evaluated in chunks of `chunk` rows.
EvalResult evaluate(const Encoder<Real>& encoder, const std::vector<Instance>& data,
                    Index chunk = 100);

Checkpoint make_checkpoint(const TrainingState& state);

// Loads parameter values, optimizer moments and counters; every shape is
// checked against the model.
void restore_checkpoint(TrainingState& state, const Checkpoint& ckpt);

struct RunOptions {
  std::filesystem::path out;
  std::optional<std::filesystem::path> resume;  // checkpoint directory
  bool quiet = true;
};

struct RunSummary {
  std::string variant;
  std::uint64_t seed = 0;
  TrainableCounts trainable;
  double initial_map = 0;
  double best_map = 0;
  long long best_step = 0;
  double final_map = 0;
  long long steps = 0;
};

/// Writes into opts.out: config.toml (resolved), log.csv, eval.csv,
/// support_counts.csv, checkpoints/best, checkpoints/final and summary.json.
/// Log rows are flushed as they are written.
RunSummary run_training(const TrainConfig& cfg, const Datasets& data, const RunOptions& opts);
RunSummary run_training(const TrainConfig& cfg, const RunOptions& opts);

std::string format_real(double v);

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  bool ok = false;
  RunSummary summary;
  std::string error;
};

/// Runs every (variant, seed) into out/<variant>/seed-<seed> and writes
/// out/ablation.csv. A failed run becomes a row with status "failed".
std::vector<AblationRow> run_ablation(const TrainConfig& base,
                                      const std::vector<VariantSpec>& variants,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::filesystem::path& out);

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path);

}  // namespace fewshot
