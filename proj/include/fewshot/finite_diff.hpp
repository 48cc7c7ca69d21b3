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

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include "fewshot/error.hpp"

namespace fewshot {

using ScalarFunction = std::function<double(const Eigen::VectorXd&)>;

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
inline Eigen::VectorXd finite_diff_grad(const ScalarFunction& f, const Eigen::VectorXd& theta,
                                        double h = 1e-5) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: h must be positive");
  Eigen::VectorXd grad(theta.size());
  Eigen::VectorXd probe = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    probe[i] = theta[i] + h;
    const double up = f(probe);
    probe[i] = theta[i] - h;
    const double down = f(probe);
    probe[i] = theta[i];
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NonFinite("objective at coordinate " + std::to_string(i));
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

// Floor on the denominator of relative_error so that coordinates whose true
// gradient is zero are compared absolutely.
inline constexpr double kRelativeErrorFloor = 1e-6;

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                             double floor = kRelativeErrorFloor) {
  if (a.size() != b.size()) throw ShapeMismatch("relative_error operands differ in length");
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace fewshot
