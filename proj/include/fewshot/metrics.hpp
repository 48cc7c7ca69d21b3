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
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "fewshot/tensor.hpp"

namespace fewshot {

/// Average precision over descending score thresholds: sum over thresholds
/// of (recall gain) x (precision at that threshold). Tied scores form one
/// threshold, so the value does not depend on input order. Without ties this
/// is the mean of precision@r over the ranks r of the positives. Throws
/// NoPositives when no label is set.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct EvalResult {
  std::vector<std::optional<double>> per_class_ap;  // nullopt for classes without positives
  std::vector<Index> n_pos;
  std::vector<Index> excluded;  // classes left out of the mean
  double map = 0.0;
};

// Per-class AP over the rows of scores/labels [B, K] and their unweighted mean
// over classes with at least one positive.
EvalResult mean_ap(const Tensor<double>& scores, const Tensor<double>& labels);

// class_id,n_pos,ap rows followed by "mAP,<value>".
void write_eval_csv(const EvalResult& result, std::ostream& os);

}  // namespace fewshot
