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

// Training objective over a PredictionBundle:
//
//   total = bce + lambda_distill * distill + lambda_aug * bce_w + lambda_ent * ent
//
// bce     mean BCE of the original logits against the labels
// distill mean BCE of each augmented logit against sigmoid(z_orig), detached
// bce_w   per-(augmentation, sample) BCE against the labels, scaled by a
//         Gaussian weight of how far that augmentation's divergence sits from
//         the group mean for the sample
// ent     negative mean binary entropy of the augmented predictions

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "fewshot/encoder.hpp"
#include "fewshot/ops.hpp"

namespace fewshot {

struct LossWeights {
  double lambda_distill = 0.1;
  double lambda_aug = 1.0;
  double lambda_ent = 0.01;
  double s = 1.5;     // Gaussian width in z-score units
  double eps = 1e-6;  // added to the group standard deviation

  void validate() const {
    if (lambda_distill < 0 || lambda_aug < 0 || lambda_ent < 0)
      throw ConfigMismatch("loss lambdas must be non-negative");
    if (!(s > 0)) throw ConfigMismatch("weighting scale s must be positive");
    if (!(eps > 0)) throw ConfigMismatch("eps must be positive");
  }
};

struct ObjectiveOptions {
  bool group_weighting = true;         // false forces w = 1
  bool differentiate_weights = false;  // backpropagate through d, mu, sigma, z, w
};

// Probability clamp applied to sigmoid(z_orig) before it is used as a target.
inline constexpr double kTargetClamp = 1e-7;

template <typename Scalar>
struct GroupWeightStats {
  Tensor<Scalar> d;      // [N, B]
  Tensor<Scalar> mu;     // [B]
  Tensor<Scalar> sigma;  // [B]
  Tensor<Scalar> z;      // [N, B]
  Tensor<Scalar> w;      // [N, B]
};

template <typename Scalar>
struct LossReport {
  double total = 0, bce = 0, distill = 0, bce_w = 0, ent = 0;
  double mean_w = 1, min_w = 1;  // of the weights actually applied
  GroupWeightStats<Scalar> stats;
};

// Recorded terms of one objective evaluation. Augmentation terms are
// invalid Vars when the bundle has no augmentations.
template <typename Scalar>
struct ObjectiveTerms {
  Var<Scalar> total, bce, distill, bce_w, ent;
  Tensor<Scalar> p_orig;
  LossReport<Scalar> report;
};

// Overrides for the detached quantities, used when an outside caller must pin
// them (e.g. to differentiate the stop-gradient objective numerically).
template <typename Scalar>
struct DetachedTargets {
  Tensor<Scalar> p_orig;  // [B, K]
  Tensor<Scalar> w;       // [N, B]
};

namespace detail {

template <typename Scalar>
void require_binary(const Tensor<Scalar>& y) {
  for (Index i = 0; i < y.numel(); ++i)
    if (y[i] != Scalar(0) && y[i] != Scalar(1))
      throw TargetOutOfRange("labels must be 0 or 1");
}

template <typename Scalar>
void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw ShapeMismatch(std::string(what) + ": " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> detached_probabilities(const Tensor<Scalar>& z_orig) {
  Tensor<Scalar> p(z_orig.shape());
  const auto lo = static_cast<Scalar>(kTargetClamp);
  const auto hi = static_cast<Scalar>(1.0 - kTargetClamp);
  for (Index i = 0; i < p.numel(); ++i) p[i] = std::clamp(stable_sigmoid(z_orig[i]), lo, hi);
  return p;
}

// mean over B*K of BCE(z_orig, y)
template <typename Scalar>
Var<Scalar> anchor_bce(const Var<Scalar>& z_orig, const Tensor<Scalar>& y) {
  detail::require_same_shape<Scalar>(z_orig.shape(), y.shape(), "anchor_bce");
  detail::require_binary(y);
  return mean_all(bce_with_logits(z_orig, z_orig.graph().constant(y)));
}

// mean over N*B*K of BCE(z_aug_i, p_orig); p_orig carries no gradient.
template <typename Scalar>
Var<Scalar> distill_loss(const std::vector<Var<Scalar>>& z_aug, const Var<Scalar>& p_orig) {
  if (z_aug.empty()) throw ShapeMismatch("distill_loss needs at least one augmentation");
  std::vector<Var<Scalar>> terms;
  for (const auto& z : z_aug) {
    detail::require_same_shape<Scalar>(z.shape(), p_orig.shape(), "distill_loss");
    terms.push_back(bce_with_logits(z, detach(p_orig)));
  }
  return mean_all(stack(terms));
}

// l_{i,b}: mean over K of BCE(z_aug_i, y) -> [B]
template <typename Scalar>
Var<Scalar> per_sample_aug_bce(const Var<Scalar>& z_aug_i, const Tensor<Scalar>& y) {
  detail::require_same_shape<Scalar>(z_aug_i.shape(), y.shape(), "per_sample_aug_bce");
  detail::require_binary(y);
  return mean(bce_with_logits(z_aug_i, z_aug_i.graph().constant(y)), {1});
}

// d_{i,b}: mean over K of BCE(z_aug_i, p_orig), as plain values.
template <typename Scalar>
Tensor<Scalar> bce_distance(const Tensor<Scalar>& z_aug_i, const Tensor<Scalar>& p_orig) {
  detail::require_same_shape<Scalar>(z_aug_i.shape(), p_orig.shape(), "bce_distance");
  const Index b = z_aug_i.size(0);
  const Index k = z_aug_i.size(1);
  Tensor<Scalar> d({b});
  for (Index r = 0; r < b; ++r) {
    Scalar acc = 0;
    for (Index c = 0; c < k; ++c) acc += bce_logit_value(z_aug_i[r * k + c], p_orig[r * k + c]);
    d[r] = acc / static_cast<Scalar>(k);
  }
  return d;
}

/// Per-sample Gaussian weights over the N augmentation distances.
///
/// mu and sigma are the mean and population standard deviation over axis 0;
/// z = (d - mu) / (sigma + eps); w = exp(-z^2 / 2 s^2).
template <typename Scalar>
GroupWeightStats<Scalar> group_weights(const Tensor<Scalar>& d, double s, double eps) {
  if (d.dim() != 2) throw ShapeMismatch("group_weights expects [N, B], got " + shape_str(d.shape()));
  if (!(s > 0) || !(eps > 0)) throw ConfigMismatch("group_weights needs s > 0 and eps > 0");
  const Index n = d.size(0);
  const Index b = d.size(1);
  GroupWeightStats<Scalar> st;
  st.d = d;
  st.mu = Tensor<Scalar>({b});
  st.sigma = Tensor<Scalar>({b});
  st.z = Tensor<Scalar>({n, b});
  st.w = Tensor<Scalar>({n, b});
  for (Index col = 0; col < b; ++col) {
    // Mean taken relative to the first entry so equal distances give mu == d exactly.
    const Scalar ref = d[col];
    Scalar shift = 0;
    for (Index i = 0; i < n; ++i) shift += d[i * b + col] - ref;
    const Scalar mu = ref + shift / static_cast<Scalar>(n);
    Scalar var = 0;
    for (Index i = 0; i < n; ++i) {
      const Scalar dev = d[i * b + col] - mu;
      var += dev * dev;
    }
    const Scalar sigma = std::sqrt(var / static_cast<Scalar>(n));
    st.mu[col] = mu;
    st.sigma[col] = sigma;
    for (Index i = 0; i < n; ++i) {
      const Scalar z = (d[i * b + col] - mu) / (sigma + static_cast<Scalar>(eps));
      st.z[i * b + col] = z;
      st.w[i * b + col] = std::exp(-z * z / static_cast<Scalar>(2.0 * s * s));
    }
  }
  return st;
}

// Differentiable counterpart of group_weights over a recorded d [N, B].
// sigma is sqrt(var + eps^2) here so the derivative stays finite when every
// distance in a group coincides.
template <typename Scalar>
Var<Scalar> group_weights(const Var<Scalar>& d, double s, double eps) {
  const auto e = static_cast<Scalar>(eps);
  const Var<Scalar> centered = sub(d, mean(d, {0}));
  const Var<Scalar> sigma = sqrt(add_scalar(mean(square(centered), {0}), e * e));
  const Var<Scalar> z = div(centered, add_scalar(sigma, e));
  return exp(scale(square(z), static_cast<Scalar>(-1.0 / (2.0 * s * s))));
}

// (1 / (N B)) sum_{i,b} w_{i,b} l_{i,b}
template <typename Scalar>
Var<Scalar> weighted_aug_loss(const Var<Scalar>& ell, const Var<Scalar>& w) {
  detail::require_same_shape<Scalar>(ell.shape(), w.shape(), "weighted_aug_loss");
  return mean_all(mul(ell, w));
}

// -(1 / (N B K)) sum H(sigmoid(z_aug))
template <typename Scalar>
Var<Scalar> entropy_loss(const std::vector<Var<Scalar>>& z_aug) {
  if (z_aug.empty()) throw ShapeMismatch("entropy_loss needs at least one augmentation");
  std::vector<Var<Scalar>> terms;
  for (const auto& z : z_aug) terms.push_back(binary_entropy_with_logits(z));
  return neg(mean_all(stack(terms)));
}

/// Composes the four terms on the bundle's graph. With no augmentations
/// the three augmentation terms are zero.
template <typename Scalar>
ObjectiveTerms<Scalar> total_loss(const PredictionBundle<Scalar>& bundle, const Tensor<Scalar>& y,
                                  const LossWeights& lw, const ObjectiveOptions& opts = {},
                                  const DetachedTargets<Scalar>* pinned = nullptr) {
  lw.validate();
  Graph<Scalar>& g = bundle.z_orig.graph();
  ObjectiveTerms<Scalar> t;
  t.bce = anchor_bce(bundle.z_orig, y);
  t.total = t.bce;
  LossReport<Scalar>& rep = t.report;
  rep.bce = static_cast<double>(t.bce.value().item());

  const auto n = static_cast<Index>(bundle.z_aug.size());
  if (n > 0) {
    t.p_orig = pinned ? pinned->p_orig : detached_probabilities(bundle.z_orig.value());
    const Var<Scalar> p = g.constant(t.p_orig);

    t.distill = distill_loss(bundle.z_aug, p);

    std::vector<Tensor<Scalar>> dist_rows;
    std::vector<Var<Scalar>> ell_rows, dist_vars;
    for (const auto& z : bundle.z_aug) {
      ell_rows.push_back(per_sample_aug_bce(z, y));
      if (opts.differentiate_weights)
        dist_vars.push_back(mean(bce_with_logits(z, p), {1}));
      else
        dist_rows.push_back(bce_distance(z.value(), t.p_orig));
    }
    const Var<Scalar> ell = stack(ell_rows);
    const Index b = ell.shape()[1];
    Tensor<Scalar> d({n, b});
    if (opts.differentiate_weights) {
      const Var<Scalar> dv = stack(dist_vars);
      d = dv.value();
      rep.stats = group_weights(d, lw.s, lw.eps);
      const Var<Scalar> w = opts.group_weighting ? group_weights(dv, lw.s, lw.eps)
                                                 : g.constant(Tensor<Scalar>::ones({n, b}));
      t.bce_w = weighted_aug_loss(ell, w);
      rep.mean_w = static_cast<double>(w.value().flat().mean());
      rep.min_w = static_cast<double>(w.value().flat().minCoeff());
    } else {
      for (Index i = 0; i < n; ++i) d.flat().segment(i * b, b) = dist_rows[i].flat();
      rep.stats = group_weights(d, lw.s, lw.eps);
      Tensor<Scalar> w = pinned              ? pinned->w
                         : opts.group_weighting ? rep.stats.w
                                                : Tensor<Scalar>::ones({n, b});
      detail::require_same_shape<Scalar>(w.shape(), ell.shape(), "applied weights");
      rep.mean_w = static_cast<double>(w.flat().mean());
      rep.min_w = static_cast<double>(w.flat().minCoeff());
      t.bce_w = weighted_aug_loss(ell, g.constant(std::move(w)));
    }

    t.ent = entropy_loss(bundle.z_aug);

    t.total = add(add(add(t.total, scale(t.distill, static_cast<Scalar>(lw.lambda_distill))),
                      scale(t.bce_w, static_cast<Scalar>(lw.lambda_aug))),
                  scale(t.ent, static_cast<Scalar>(lw.lambda_ent)));
    rep.distill = static_cast<double>(t.distill.value().item());
    rep.bce_w = static_cast<double>(t.bce_w.value().item());
    rep.ent = static_cast<double>(t.ent.value().item());
  }
  rep.total = static_cast<double>(t.total.value().item());
  return t;
}

}  // namespace fewshot
