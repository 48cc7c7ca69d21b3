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
#include <ostream>
#include <string>
#include <vector>

namespace fewshot {

struct GradcheckOptions {
  double h = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
};

struct GradcheckCase {
  std::string name;         // which loss term, and in which weighting mode
  double max_rel_error = 0;
  std::string worst_param;  // parameter holding the worst coordinate
  long long coordinates = 0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  double seconds = 0;
  bool passed() const;
};

/// Compares analytic and central-difference gradients of the total loss and
/// of each term with respect to every LoRA and FiLM coordinate of a tiny
/// double-precision model (L=2, C=8, 2 heads, T'=4, N=2, B=2, K=3).
///
/// The adapter and generator output layers start at zero, so they are
/// perturbed first; otherwise most coordinates would have zero gradient.
/// Detached targets are pinned at their base values for the numeric side,
/// which is the function the analytic gradient differentiates. A second pass
/// backpropagates through the group weights.
GradcheckReport run_gradcheck(const GradcheckOptions& opts = {});

void print_gradcheck(const GradcheckReport& report, std::ostream& os);

}  // namespace fewshot
