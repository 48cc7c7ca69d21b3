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

// Differentiable primitives over Var. Each primitive records one node with
// an explicit forward and backward rule; composite operations are plain
// functions of these.

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "fewshot/graph.hpp"

namespace fewshot {

// Sigmoid evaluated on the branch that cannot overflow.
template <typename Scalar>
inline Scalar stable_sigmoid(Scalar z) {
  if (z >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-z));
  const Scalar e = std::exp(z);
  return e / (Scalar(1) + e);
}

// max(z,0) - z*t + log(1 + exp(-|z|))
template <typename Scalar>
inline Scalar bce_logit_value(Scalar z, Scalar t) {
  return std::max(z, Scalar(0)) - z * t + std::log1p(std::exp(-std::abs(z)));
}

// H(sigmoid(z)) = log(1 + exp(-|z|)) + |z| * sigmoid(-|z|), free of cancellation.
template <typename Scalar>
inline Scalar entropy_logit_value(Scalar z) {
  const Scalar a = std::abs(z);
  return std::log1p(std::exp(-a)) + a * stable_sigmoid(-a);
}

// Binary entropy of a probability, with H(0) = H(1) = 0.
template <typename Scalar>
inline Scalar binary_entropy(Scalar p) {
  Scalar h = 0;
  if (p > Scalar(0)) h -= p * std::log(p);
  if (p < Scalar(1)) h -= (Scalar(1) - p) * std::log1p(-p);
  return h;
}

namespace detail {

template <typename Scalar>
using TensorT = Tensor<Scalar>;
template <typename Scalar>
using Inputs = typename Graph<Scalar>::Inputs;
template <typename Scalar>
using Grads = typename Graph<Scalar>::Grads;

template <typename Scalar, typename F>
Tensor<Scalar> broadcast_apply(const Tensor<Scalar>& a, const Tensor<Scalar>& b, F f) {
  Tensor<Scalar> out(broadcast_shape(a.shape(), b.shape()));
  const Scalar* pa = a.data();
  const Scalar* pb = b.data();
  Scalar* po = out.data();
  for_each_broadcast(out.shape(), a.shape(), b.shape(),
                     [&](Index o, Index ia, Index ib) { po[o] = f(pa[ia], pb[ib]); });
  return out;
}

// Accumulates upstream * da(a,b) into ga and upstream * db(a,b) into gb,
// summing over stretched axes.
template <typename Scalar, typename DA, typename DB>
void broadcast_backward(const Tensor<Scalar>& up, const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                        Tensor<Scalar>* ga, Tensor<Scalar>* gb, DA da, DB db) {
  const Scalar* pu = up.data();
  const Scalar* pa = a.data();
  const Scalar* pb = b.data();
  Scalar* qa = ga ? ga->data() : nullptr;
  Scalar* qb = gb ? gb->data() : nullptr;
  for_each_broadcast(up.shape(), a.shape(), b.shape(), [&](Index o, Index ia, Index ib) {
    if (qa) qa[ia] += pu[o] * da(pa[ia], pb[ib]);
    if (qb) qb[ib] += pu[o] * db(pa[ia], pb[ib]);
  });
}

template <typename Scalar, typename F, typename DF>
Var<Scalar> unary(std::string op, const Var<Scalar>& x, F f, DF df) {
  return x.graph().record(
      std::move(op), {x},
      [f](const Inputs<Scalar>& in) {
        Tensor<Scalar> out(in[0]->shape());
        out.flat() = in[0]->flat().unaryExpr(f);
        return out;
      },
      [df](const Tensor<Scalar>& up, const Inputs<Scalar>& in, const Tensor<Scalar>& out,
           Grads<Scalar>& g) {
        if (!g[0]) return;
        const Scalar* px = in[0]->data();
        const Scalar* py = out.data();
        const Scalar* pu = up.data();
        Scalar* pg = g[0]->data();
        for (Index i = 0; i < out.numel(); ++i) pg[i] += pu[i] * df(px[i], py[i]);
      });
}

inline std::vector<Index> normalize_axes(const std::vector<Index>& axes, Index rank) {
  std::set<Index> seen;
  for (Index a : axes) {
    const Index n = a < 0 ? a + rank : a;
    if (n < 0 || n >= rank)
      throw AxisOutOfRange("axis " + std::to_string(a) + " for rank " + std::to_string(rank));
    seen.insert(n);
  }
  return {seen.begin(), seen.end()};
}

// Calls f(in_flat, out_flat) mapping every input element to its reduced slot.
template <typename F>
void for_each_reduced(const Shape& in, const std::vector<Index>& axes, F&& f) {
  const Index rank = static_cast<Index>(in.size());
  const Index n = shape_numel(in);
  Shape kept = in;
  for (Index a : axes) kept[a] = 1;
  const auto contiguous_tail = [&] {
    for (std::size_t i = 0; i < axes.size(); ++i)
      if (axes[i] != rank - static_cast<Index>(axes.size()) + static_cast<Index>(i)) return false;
    return true;
  };
  const auto contiguous_head = [&] {
    for (std::size_t i = 0; i < axes.size(); ++i)
      if (axes[i] != static_cast<Index>(i)) return false;
    return true;
  };
  if (axes.empty()) {
    for (Index i = 0; i < n; ++i) f(i, i);
  } else if (contiguous_tail()) {
    const Index inner = n / shape_numel(kept);
    for (Index i = 0; i < n; ++i) f(i, i / inner);
  } else if (contiguous_head()) {
    const Index outer = shape_numel(kept);
    for (Index i = 0; i < n; ++i) f(i, i % outer);
  } else {
    for_each_broadcast(in, in, kept, [&](Index i, Index, Index k) { f(i, k); });
  }
}

inline Shape reduced_shape(const Shape& in, const std::vector<Index>& axes, bool keepdims) {
  Shape out;
  for (Index i = 0; i < static_cast<Index>(in.size()); ++i) {
    const bool reduced = std::find(axes.begin(), axes.end(), i) != axes.end();
    if (!reduced)
      out.push_back(in[i]);
    else if (keepdims)
      out.push_back(1);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic with trailing-axis broadcasting.

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  return a.graph().record(
      "add", {a, b},
      [](const detail::Inputs<Scalar>& in) {
        return detail::broadcast_apply(*in[0], *in[1], [](Scalar x, Scalar y) { return x + y; });
      },
      [](const Tensor<Scalar>& up, const detail::Inputs<Scalar>& in, const Tensor<Scalar>&,
         detail::Grads<Scalar>& g) {
        detail::broadcast_backward(
            up, *in[0], *in[1], g[0], g[1], [](Scalar, Scalar) { return Scalar(1); },
            [](Scalar, Scalar) { return Scalar(1); });
      });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  return a.graph().record(
      "sub", {a, b},
      [](const detail::Inputs<Scalar>& in) {
        return detail::broadcast_apply(*in[0], *in[1], [](Scalar x, Scalar y) { return x - y; });
      },
      [](const Tensor<Scalar>& up, const detail::Inputs<Scalar>& in, const Tensor<Scalar>&,
         detail::Grads<Scalar>& g) {
        detail::broadcast_backward(
            up, *in[0], *in[1], g[0], g[1], [](Scalar, Scalar) { return Scalar(1); },
            [](Scalar, Scalar) { return Scalar(-1); });
      });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  return a.graph().record(
      "mul", {a, b},
      [](const detail::Inputs<Scalar>& in) {
        return detail::broadcast_apply(*in[0], *in[1], [](Scalar x, Scalar y) { return x * y; });
      },
      [](const Tensor<Scalar>& up, const detail::Inputs<Scalar>& in, const Tensor<Scalar>&,
         detail::Grads<Scalar>& g) {
        detail::broadcast_backward(
            up, *in[0], *in[1], g[0], g[1], [](Scalar, Scalar y) { return y; },
            [](Scalar x, Scalar) { return x; });
      });
}

template <typename Scalar>
Var<Scalar> div(const Var<Scalar>& a, const Var<Scalar>& b) {
  return a.graph().record(
      "div", {a, b},
      [](const detail::Inputs<Scalar>& in) {
        return detail::broadcast_apply(*in[0], *in[1], [](Scalar x, Scalar y) { return x / y; });
      },
      [](const Tensor<Scalar>& up, const detail::Inputs<Scalar>& in, const Tensor<Scalar>&,
         detail::Grads<Scalar>& g) {
        detail::broadcast_backward(
            up, *in[0], *in[1], g[0], g[1], [](Scalar, Scalar y) { return Scalar(1) / y; },
            [](Scalar x, Scalar y) { return -x / (y * y); });
      });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) { return mul(a, b); }
template <typename Scalar>
Var<Scalar> operator/(const Var<Scalar>& a, const Var<Scalar>& b) { return div(a, b); }

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar c) {
  return detail::unary(
      "scale", x, [c](Scalar v) { return v * c; }, [c](Scalar, Scalar) { return c; });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& x, Scalar c) {
  return detail::unary(
      "add_scalar", x, [c](Scalar v) { return v + c; }, [](Scalar, Scalar) { return Scalar(1); });
}

template <typename Scalar>
Var<Scalar> neg(const Var<Scalar>& x) {
  return scale(x, Scalar(-1));
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities.

template <typename Scalar>
Var<Scalar> exp(const Var<Scalar>& x) {
  return detail::unary(
      "exp", x, [](Scalar v) { return std::exp(v); }, [](Scalar, Scalar y) { return y; });
}

template <typename Scalar>
Var<Scalar> log(const Var<Scalar>& x) {
  return detail::unary(
      "log", x, [](Scalar v) { return std::log(v); }, [](Scalar v, Scalar) { return Scalar(1) / v; });
}

template <typename Scalar>
Var<Scalar> sqrt(const Var<Scalar>& x) {
  return detail::unary(
      "sqrt", x, [](Scalar v) { return std::sqrt(v); },
      [](Scalar, Scalar y) { return Scalar(0.5) / y; });
}

template <typename Scalar>
Var<Scalar> square(const Var<Scalar>& x) {
  return detail::unary(
      "square", x, [](Scalar v) { return v * v; }, [](Scalar v, Scalar) { return Scalar(2) * v; });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) {
  return detail::unary(
      "sigmoid", x, [](Scalar v) { return stable_sigmoid(v); },
      [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

// Exact (erf) GELU.
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& x) {
  constexpr Scalar kInvSqrt2 = Scalar(1) / std::numbers::sqrt2_v<Scalar>;
  constexpr Scalar kInvSqrt2Pi = std::numbers::inv_sqrtpi_v<Scalar> * kInvSqrt2;
  return detail::unary(
      "gelu", x, [](Scalar v) { return Scalar(0.5) * v * (Scalar(1) + std::erf(v * kInvSqrt2)); },
      [](Scalar v, Scalar) {
        return Scalar(0.5) * (Scalar(1) + std::erf(v * kInvSqrt2)) +
               v * kInvSqrt2Pi * std::exp(Scalar(-0.5) * v * v);
      });
}

// Elementwise binary cross-entropy on logits. Targets may be hard labels or
// probabilities and must lie in [0, 1].
template <typename Scalar>
Var<Scalar> bce_with_logits(const Var<Scalar>& logits, const Var<Scalar>& targets) {
  return logits.graph().record(
      "bce_with_logits", {logits, targets},
      [](const detail::Inputs<Scalar>& in) {
        const auto& t = in[1]->flat();
        if (t.size() > 0 && (t.minCoeff() < Scalar(0) || t.maxCoeff() > Scalar(1)))
          throw TargetOutOfRange("BCE targets must lie in [0,1]");
        return detail::broadcast_apply(*in[0], *in[1], bce_logit_value<Scalar>);
      },
      [](const Tensor<Scalar>& up, const detail::Inputs<Scalar>& in, const Tensor<Scalar>&,
         detail::Grads<Scalar>& g) {
        detail::broadcast_backward(
            up, *in[0], *in[1], g[0], g[1],
            [](Scalar z, Scalar t) { return stable_sigmoid(z) - t; },
            [](Scalar z, Scalar) { return -z; });
      });
}

// Elementwise H(sigmoid(z)).
template <typename Scalar>
Var<Scalar> binary_entropy_with_logits(const Var<Scalar>& logits) {
  return detail::unary(
      "binary_entropy_with_logits", logits, [](Scalar z) { return entropy_logit_value(z); },
      [](Scalar z, Scalar) {
        return -z * stable_sigmoid(z) * stable_sigmoid(-z);
      });
}

// Same value, no gradient.
template <typename Scalar>
Var<Scalar> detach(const Var<Scalar>& x) {
  return x.graph().record(
      "detach", {x}, [](const detail::Inputs<Scalar>& in) { return *in[0]; }, nullptr);
}

// ---------------------------------------------------------------------------
// Reductions.

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x, const std::vector<Index>& axes, bool keepdims = false) {
  const auto ax = detail::normalize_axes(axes, x.dim());
  const Shape in_shape = x.shape();
  const Shape out_shape = detail::reduced_shape(in_shape, ax, keepdims);
  return x.graph().record(
      "sum", {x},
      [ax, out_shape](const detail::Inputs<Scalar>& in) {
        Tensor<Scalar> out(out_shape);
        const Scalar* px = in[0]->data();
        Scalar* po = out.data();
        detail::for_each_reduced(in[0]->shape(), ax, [&](Index i, Index o) { po[o] += px[i]; });
        return out;
      },
      [ax](const Tensor<Scalar>& up, const detail::Inputs<Scalar>& in, const Tensor<Scalar>&,
           detail::Grads<Scalar>& g) {
        if (!g[0]) return;
        const Scalar* pu = up.data();
        Scalar* pg = g[0]->data();
        detail::for_each_reduced(in[0]->shape(), ax, [&](Index i, Index o) { pg[i] += pu[o]; });
      });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x, const std::vector<Index>& axes, bool keepdims = false) {
  const auto ax = detail::normalize_axes(axes, x.dim());
  Index count = 1;
  for (Index a : ax) count *= x.shape()[a];
  return scale(sum(x, ax, keepdims), Scalar(1) / static_cast<Scalar>(count));
}

template <typename Scalar>
Var<Scalar> sum_all(const Var<Scalar>& x) {
  std::vector<Index> axes(x.dim());
  std::iota(axes.begin(), axes.end(), Index{0});
  return sum(x, axes);
}

template <typename Scalar>
Var<Scalar> mean_all(const Var<Scalar>& x) {
  return scale(sum_all(x), Scalar(1) / static_cast<Scalar>(x.value().numel()));
}

// ---------------------------------------------------------------------------
// Shape manipulation.

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
  if (shape_numel(shape) != x.value().numel())
    throw ShapeMismatch("reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  return x.graph().record(
      "reshape", {x},
      [shape](const detail::Inputs<Scalar>& in) { return in[0]->reshaped(shape); },
      [](const Tensor<Scalar>& up, const detail::Inputs<Scalar>&, const Tensor<Scalar>&,
         detail::Grads<Scalar>& g) {
        if (g[0]) g[0]->flat() += up.flat();
      });
}

template <typename Scalar>
Var<Scalar> permute(const Var<Scalar>& x, std::vector<Index> perm) {
  const Shape in_shape = x.shape();
  const Index rank = x.dim();
  {
    std::vector<Index> sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    for (Index i = 0; i < rank; ++i)
      if (static_cast<Index>(sorted.size()) != rank || sorted[i] != i)
        throw AxisOutOfRange("invalid permutation for rank " + std::to_string(rank));
  }
  Shape out_shape(rank);
  const Shape in_strides = shape_strides(in_shape);
  Shape gather(rank);
  for (Index j = 0; j < rank; ++j) {
    out_shape[j] = in_shape[perm[j]];
    gather[j] = in_strides[perm[j]];
  }
  // Calls f(out_flat, in_flat).
  auto walk = [out_shape, gather](auto&& f) {
    const Index n = shape_numel(out_shape);
    const Index r = static_cast<Index>(out_shape.size());
    Shape counter(r, 0);
    Index src = 0;
    for (Index o = 0; o < n; ++o) {
      f(o, src);
      for (Index axis = r - 1; axis >= 0; --axis) {
        if (++counter[axis] < out_shape[axis]) {
          src += gather[axis];
          break;
        }
        src -= gather[axis] * (out_shape[axis] - 1);
        counter[axis] = 0;
      }
    }
  };
  return x.graph().record(
      "permute", {x},
      [walk, out_shape](const detail::Inputs<Scalar>& in) {
        Tensor<Scalar> out(out_shape);
        const Scalar* px = in[0]->data();
        Scalar* po = out.data();
        walk([&](Index o, Index i) { po[o] = px[i]; });
        return out;
      },
      [walk](const Tensor<Scalar>& up, const detail::Inputs<Scalar>&, const Tensor<Scalar>&,
             detail::Grads<Scalar>& g) {
        if (!g[0]) return;
        const Scalar* pu = up.data();
        Scalar* pg = g[0]->data();
        walk([&](Index o, Index i) { pg[i] += pu[o]; });
      });
}

// Slice [start, start+length) along `axis`.
template <typename Scalar>
Var<Scalar> narrow(const Var<Scalar>& x, Index axis, Index start, Index length) {
  const Index rank = x.dim();
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw AxisOutOfRange("narrow axis " + std::to_string(axis));
  const Shape in_shape = x.shape();
  if (start < 0 || length < 1 || start + length > in_shape[axis])
    throw IndexOutOfRange("narrow [" + std::to_string(start) + "," +
                          std::to_string(start + length) + ") of extent " +
                          std::to_string(in_shape[axis]));
  Shape out_shape = in_shape;
  out_shape[axis] = length;
  Index outer = 1;
  for (Index i = 0; i < axis; ++i) outer *= in_shape[i];
  Index inner = 1;
  for (Index i = axis + 1; i < rank; ++i) inner *= in_shape[i];
  const Index in_extent = in_shape[axis];
  auto walk = [=](auto&& f) {
    for (Index o = 0; o < outer; ++o)
      for (Index j = 0; j < length; ++j)
        for (Index i = 0; i < inner; ++i)
          f((o * length + j) * inner + i, (o * in_extent + start + j) * inner + i);
  };
  return x.graph().record(
      "narrow", {x},
      [walk, out_shape](const detail::Inputs<Scalar>& in) {
        Tensor<Scalar> out(out_shape);
        const Scalar* px = in[0]->data();
        Scalar* po = out.data();
        walk([&](Index o, Index i) { po[o] = px[i]; });
        return out;
      },
      [walk](const Tensor<Scalar>& up, const detail::Inputs<Scalar>&, const Tensor<Scalar>&,
             detail::Grads<Scalar>& g) {
        if (!g[0]) return;
        const Scalar* pu = up.data();
        Scalar* pg = g[0]->data();
        walk([&](Index o, Index i) { pg[i] += pu[o]; });
      });
}

// Row `index` of axis 0, with that axis removed.
template <typename Scalar>
Var<Scalar> select(const Var<Scalar>& x, Index index) {
  if (x.dim() < 1) throw AxisOutOfRange("select on a scalar");
  if (index < 0 || index >= x.shape()[0])
    throw IndexOutOfRange("select " + std::to_string(index) + " of " +
                          std::to_string(x.shape()[0]));
  Shape out_shape(x.shape().begin() + 1, x.shape().end());
  return reshape(narrow(x, 0, index, 1), out_shape);
}

// Stacks equally shaped values along a new leading axis.
template <typename Scalar>
Var<Scalar> stack(const std::vector<Var<Scalar>>& xs) {
  if (xs.empty()) throw ShapeMismatch("stack of zero tensors");
  const Shape item = xs.front().shape();
  for (const auto& x : xs)
    if (x.shape() != item) throw ShapeMismatch("stack " + shape_str(x.shape()) + " vs " +
                                               shape_str(item));
  Shape out_shape{static_cast<Index>(xs.size())};
  out_shape.insert(out_shape.end(), item.begin(), item.end());
  const Index block = shape_numel(item);
  return xs.front().graph().record(
      "stack", xs,
      [out_shape, block](const detail::Inputs<Scalar>& in) {
        Tensor<Scalar> out(out_shape);
        for (std::size_t i = 0; i < in.size(); ++i)
          out.flat().segment(static_cast<Index>(i) * block, block) = in[i]->flat();
        return out;
      },
      [block](const Tensor<Scalar>& up, const detail::Inputs<Scalar>&, const Tensor<Scalar>&,
              detail::Grads<Scalar>& g) {
        for (std::size_t i = 0; i < g.size(); ++i)
          if (g[i]) g[i]->flat() += up.flat().segment(static_cast<Index>(i) * block, block);
      });
}

// ---------------------------------------------------------------------------
// Linear algebra.

// a[..., m, k] * b[k, n] -> [..., m, n]. With transpose_b, b is [n, k].
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b, bool transpose_b = false) {
  if (a.dim() < 1 || b.dim() != 2)
    throw ShapeMismatch("matmul expects a[..,k] and a 2-d b, got " + shape_str(a.shape()) +
                        " and " + shape_str(b.shape()));
  const Index k = a.shape().back();
  const Index bk = transpose_b ? b.shape()[1] : b.shape()[0];
  const Index n = transpose_b ? b.shape()[0] : b.shape()[1];
  if (k != bk)
    throw ShapeMismatch("matmul inner extents " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()) + (transpose_b ? "^T" : ""));
  Shape out_shape = a.shape();
  out_shape.back() = n;
  return a.graph().record(
      transpose_b ? "matmul_nt" : "matmul", {a, b},
      [=](const detail::Inputs<Scalar>& in) {
        Tensor<Scalar> out(out_shape);
        if (transpose_b)
          out.matrix(n).noalias() = in[0]->matrix(k) * in[1]->matrix(k).transpose();
        else
          out.matrix(n).noalias() = in[0]->matrix(k) * in[1]->matrix(n);
        return out;
      },
      [=](const Tensor<Scalar>& up, const detail::Inputs<Scalar>& in, const Tensor<Scalar>&,
          detail::Grads<Scalar>& g) {
        const auto dy = up.matrix(n);
        if (transpose_b) {
          if (g[0]) g[0]->matrix(k).noalias() += dy * in[1]->matrix(k);
          if (g[1]) g[1]->matrix(k).noalias() += dy.transpose() * in[0]->matrix(k);
        } else {
          if (g[0]) g[0]->matrix(k).noalias() += dy * in[1]->matrix(n).transpose();
          if (g[1]) g[1]->matrix(n).noalias() += in[0]->matrix(k).transpose() * dy;
        }
      });
}

// x * W^T (+ bias), the usual dense layer with W stored as [out, in].
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight) {
  return matmul(x, weight, true);
}

template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  return add(matmul(x, weight, true), bias);
}

// a[..., m, k] * b[..., k, n] over matching leading axes. With transpose_b,
// b is [..., n, k].
template <typename Scalar>
Var<Scalar> batched_matmul(const Var<Scalar>& a, const Var<Scalar>& b, bool transpose_b = false) {
  if (a.dim() < 2 || b.dim() != a.dim())
    throw ShapeMismatch("batched_matmul ranks " + shape_str(a.shape()) + " and " +
                        shape_str(b.shape()));
  const Index rank = a.dim();
  for (Index i = 0; i + 2 < rank; ++i)
    if (a.shape()[i] != b.shape()[i])
      throw ShapeMismatch("batched_matmul batch axes " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  const Index m = a.shape()[rank - 2];
  const Index k = a.shape()[rank - 1];
  const Index bk = transpose_b ? b.shape()[rank - 1] : b.shape()[rank - 2];
  const Index n = transpose_b ? b.shape()[rank - 2] : b.shape()[rank - 1];
  if (k != bk)
    throw ShapeMismatch("batched_matmul inner extents " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
  Shape out_shape = a.shape();
  out_shape[rank - 1] = n;
  const Index batch = shape_numel(out_shape) / (m * n);
  using Mat = typename Tensor<Scalar>::RowMatrix;
  using Map = Eigen::Map<Mat>;
  using CMap = Eigen::Map<const Mat>;
  const Index b_rows = transpose_b ? n : k;
  const Index b_cols = transpose_b ? k : n;
  return a.graph().record(
      "batched_matmul", {a, b},
      [=](const detail::Inputs<Scalar>& in) {
        Tensor<Scalar> out(out_shape);
        for (Index i = 0; i < batch; ++i) {
          CMap am(in[0]->data() + i * m * k, m, k);
          CMap bm(in[1]->data() + i * k * n, b_rows, b_cols);
          Map om(out.data() + i * m * n, m, n);
          if (transpose_b)
            om.noalias() = am * bm.transpose();
          else
            om.noalias() = am * bm;
        }
        return out;
      },
      [=](const Tensor<Scalar>& up, const detail::Inputs<Scalar>& in, const Tensor<Scalar>&,
          detail::Grads<Scalar>& g) {
        for (Index i = 0; i < batch; ++i) {
          CMap dy(up.data() + i * m * n, m, n);
          CMap am(in[0]->data() + i * m * k, m, k);
          CMap bm(in[1]->data() + i * k * n, b_rows, b_cols);
          if (g[0]) {
            Map ga(g[0]->data() + i * m * k, m, k);
            if (transpose_b)
              ga.noalias() += dy * bm;
            else
              ga.noalias() += dy * bm.transpose();
          }
          if (g[1]) {
            Map gb(g[1]->data() + i * k * n, b_rows, b_cols);
            if (transpose_b)
              gb.noalias() += dy.transpose() * am;
            else
              gb.noalias() += am.transpose() * dy;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization.

template <typename Scalar>
Var<Scalar> softmax_last(const Var<Scalar>& x) {
  if (x.dim() < 1) throw AxisOutOfRange("softmax on a scalar");
  const Index n = x.shape().back();
  return x.graph().record(
      "softmax", {x},
      [n](const detail::Inputs<Scalar>& in) {
        Tensor<Scalar> out(in[0]->shape());
        auto xm = in[0]->matrix(n);
        auto ym = out.matrix(n);
        for (Index r = 0; r < xm.rows(); ++r) {
          const Scalar mx = xm.row(r).maxCoeff();
          ym.row(r) = (xm.row(r).array() - mx).exp().matrix();
          ym.row(r) /= ym.row(r).sum();
        }
        return out;
      },
      [n](const Tensor<Scalar>& up, const detail::Inputs<Scalar>&, const Tensor<Scalar>& out,
          detail::Grads<Scalar>& g) {
        if (!g[0]) return;
        auto ym = out.matrix(n);
        auto dy = up.matrix(n);
        auto gx = g[0]->matrix(n);
        for (Index r = 0; r < ym.rows(); ++r) {
          const Scalar dot = ym.row(r).dot(dy.row(r));
          gx.row(r).array() += ym.row(r).array() * (dy.row(r).array() - dot);
        }
      });
}

// Layer normalization over the last axis with affine gamma, beta of that width.
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Scalar eps = Scalar(1e-5)) {
  const Index c = x.shape().back();
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
    throw ShapeMismatch("layer_norm affine " + shape_str(gamma.shape()) + " for width " +
                        std::to_string(c));
  using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  return x.graph().record(
      "layer_norm", {x, gamma, beta},
      [c, eps](const detail::Inputs<Scalar>& in) {
        Tensor<Scalar> out(in[0]->shape());
        auto xm = in[0]->matrix(c);
        auto ym = out.matrix(c);
        const auto g = in[1]->flat().transpose().array();
        const auto b = in[2]->flat().transpose().array();
        for (Index r = 0; r < xm.rows(); ++r) {
          const Scalar mu = xm.row(r).mean();
          const RowVec centered = xm.row(r).array() - mu;
          const Scalar var = centered.squaredNorm() / static_cast<Scalar>(c);
          const Scalar rstd = Scalar(1) / std::sqrt(var + eps);
          ym.row(r) = (centered.array() * rstd * g + b).matrix();
        }
        return out;
      },
      [c, eps](const Tensor<Scalar>& up, const detail::Inputs<Scalar>& in, const Tensor<Scalar>&,
               detail::Grads<Scalar>& g) {
        auto xm = in[0]->matrix(c);
        auto dy = up.matrix(c);
        const auto gam = in[1]->flat().transpose().array();
        for (Index r = 0; r < xm.rows(); ++r) {
          const Scalar mu = xm.row(r).mean();
          const RowVec centered = xm.row(r).array() - mu;
          const Scalar var = centered.squaredNorm() / static_cast<Scalar>(c);
          const Scalar rstd = Scalar(1) / std::sqrt(var + eps);
          const RowVec xhat = centered * rstd;
          if (g[1]) g[1]->flat().transpose().array() += dy.row(r).array() * xhat.array();
          if (g[2]) g[2]->flat().transpose() += dy.row(r);
          if (g[0]) {
            const RowVec dxhat = (dy.row(r).array() * gam).matrix();
            const Scalar m1 = dxhat.mean();
            const Scalar m2 = dxhat.dot(xhat) / static_cast<Scalar>(c);
            g[0]->matrix(c).row(r).array() +=
                rstd * (dxhat.array() - m1 - xhat.array() * m2);
          }
        }
      });
}

}  // namespace fewshot
