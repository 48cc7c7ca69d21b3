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

#include "fewshot/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

namespace fewshot {

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size())
    throw ShapeMismatch("average_precision: scores and labels differ in length");
  if (scores.empty()) throw NoPositives("empty ranking");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  // Equal scores share one threshold: precision is read once at the end of
  // each tie group and credited to every positive inside it.
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t start = 0; start < order.size();) {
    std::size_t end = start;
    std::size_t group_hits = 0;
    while (end < order.size() && scores[order[end]] == scores[order[start]])
      group_hits += labels[order[end++]] ? 1 : 0;
    hits += group_hits;
    if (group_hits) sum += double(group_hits) * (double(hits) / double(end));
    start = end;
  }
  if (hits == 0) throw NoPositives("no positive labels");
  return sum / double(hits);
}

EvalResult mean_ap(const Tensor<double>& scores, const Tensor<double>& labels) {
  if (scores.shape() != labels.shape() || scores.dim() != 2)
    throw ShapeMismatch("mean_ap expects equal [B, K] shapes, got " + shape_str(scores.shape()) +
                        " and " + shape_str(labels.shape()));
  const Index b = scores.size(0);
  const Index k = scores.size(1);
  EvalResult r;
  r.per_class_ap.resize(k);
  r.n_pos.assign(k, 0);
  std::vector<double> col(b);
  std::vector<std::uint8_t> lab(b);
  double total = 0.0;
  Index counted = 0;
  for (Index c = 0; c < k; ++c) {
    for (Index i = 0; i < b; ++i) {
      col[i] = scores[i * k + c];
      lab[i] = labels[i * k + c] != 0.0 ? 1 : 0;
      r.n_pos[c] += lab[i];
    }
    if (r.n_pos[c] == 0) {
      r.excluded.push_back(c);
      continue;
    }
    r.per_class_ap[c] = average_precision(col, lab);
    total += *r.per_class_ap[c];
    ++counted;
  }
  if (counted == 0) throw AllClassesEmpty("no class has a positive label");
  r.map = total / double(counted);
  return r;
}

void write_eval_csv(const EvalResult& result, std::ostream& os) {
  char buf[64];
  os << "class_id,n_pos,ap\n";
  for (std::size_t c = 0; c < result.per_class_ap.size(); ++c) {
    os << c << ',' << result.n_pos[c] << ',';
    if (result.per_class_ap[c]) {
      std::snprintf(buf, sizeof(buf), "%.6f", *result.per_class_ap[c]);
      os << buf;
    }
    os << '\n';
  }
  std::snprintf(buf, sizeof(buf), "%.6f", result.map);
  os << "mAP," << buf << '\n';
}

}  // namespace fewshot
