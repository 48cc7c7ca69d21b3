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

#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "fewshot/ops.hpp"

namespace fewshot {
namespace {

using T = Tensor<double>;

TEST(TensorTest, ShapeAndFill) {
  T t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6);
  EXPECT_EQ(t.dim(), 2);
  EXPECT_EQ(t.size(-1), 3);
  EXPECT_DOUBLE_EQ(t.at({1, 2}), 1.5);
  EXPECT_THROW(T({2, 0}), ShapeMismatch);
  EXPECT_THROW(T({2, 2}, std::vector<double>{1, 2, 3}), ShapeMismatch);
  EXPECT_THROW(t.size(2), AxisOutOfRange);
  EXPECT_THROW(t.at({2, 0}), IndexOutOfRange);
  EXPECT_THROW(t.item(), NotScalar);
  EXPECT_DOUBLE_EQ(T::scalar(4.0).item(), 4.0);
}

TEST(TensorTest, RowMajorLayout) {
  T t({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
  EXPECT_DOUBLE_EQ(t.at({1, 0}), 3);
  EXPECT_DOUBLE_EQ(t.matrix()(1, 2), 5);
  EXPECT_EQ(t.reshaped({3, 2}).at({2, 1}), 5);
}

TEST(TensorTest, CastRoundTrip) {
  T t({3}, std::vector<double>{0.5, -2.25, 8});
  EXPECT_EQ(t.cast<float>().cast<double>(), t);
  EXPECT_EQ(Tensor<float>::kDType, DType::f32);
  EXPECT_EQ(T::kDType, DType::f64);
}

TEST(BroadcastTest, Shapes) {
  EXPECT_EQ(broadcast_shape({2, 3}, {3}), (Shape{2, 3}));
  EXPECT_EQ(broadcast_shape({4, 1, 3}, {2, 1}), (Shape{4, 2, 3}));
  EXPECT_EQ(broadcast_shape({}, {5}), (Shape{5}));
  EXPECT_THROW(broadcast_shape({2, 3}, {2}), ShapeMismatch);
}

TEST(OpsTest, ElementwiseMulBroadcastsRow) {
  Graph<double> g;
  auto a = g.constant(T({2, 2}, std::vector<double>{1, 2, 3, 4}));
  auto b = g.constant(T({2}, std::vector<double>{2, 0.5}));
  EXPECT_EQ(mul(a, b).value(), T({2, 2}, std::vector<double>{2, 1, 6, 2}));
}

TEST(OpsTest, AddZerosIsIdentity) {
  Graph<double> g;
  T x({2, 3}, std::vector<double>{1, -2, 3, 0.25, 5, -6});
  auto v = g.constant(x);
  EXPECT_EQ(add(v, g.constant(T::zeros_like(x))).value(), x);
}

TEST(OpsTest, MulGradientIsOtherOperand) {
  Graph<double> g;
  auto a = g.variable(T({2}, std::vector<double>{1, 2}));
  auto b = g.variable(T({2}, std::vector<double>{3, 4}));
  g.backward(sum_all(mul(a, b)));
  EXPECT_EQ(*g.grad(a), T({2}, std::vector<double>{3, 4}));
  EXPECT_EQ(*g.grad(b), T({2}, std::vector<double>{1, 2}));
}

TEST(OpsTest, IncompatibleShapesThrow) {
  Graph<double> g;
  auto a = g.constant(T({2, 3}));
  auto b = g.constant(T({2}));
  EXPECT_THROW(add(a, b), ShapeMismatch);
  EXPECT_THROW(matmul(a, g.constant(T({2, 2}))), ShapeMismatch);
}

TEST(OpsTest, MatmulExamples) {
  Graph<double> g;
  auto eye = g.constant(T({2, 2}, std::vector<double>{1, 0, 0, 1}));
  auto col = g.constant(T({2, 1}, std::vector<double>{5, 7}));
  EXPECT_EQ(matmul(eye, col).value(), T({2, 1}, std::vector<double>{5, 7}));
  auto row = g.constant(T({1, 2}, std::vector<double>{1, 2}));
  auto c2 = g.constant(T({2, 1}, std::vector<double>{3, 4}));
  EXPECT_DOUBLE_EQ(matmul(row, c2).value().item(), 11);
}

TEST(OpsTest, MatmulTransposedMatchesExplicit) {
  Graph<double> g;
  auto a = g.constant(T({3, 2}, std::vector<double>{1, 2, 3, 4, 5, 6}));
  auto b = g.constant(T({4, 2}, std::vector<double>{1, 0, 0, 1, 1, 1, 2, -1}));
  auto bt = g.constant(permute(b, {1, 0}).value());
  EXPECT_LT(max_abs_diff(matmul(a, b, true).value(), matmul(a, bt).value()), 1e-15);
}

TEST(OpsTest, SigmoidValues) {
  EXPECT_DOUBLE_EQ(stable_sigmoid(0.0), 0.5);
  EXPECT_NEAR(stable_sigmoid(50.0), 1.0, 1e-12);
  EXPECT_NEAR(stable_sigmoid(2.0), 0.880797077978, 1e-6);
  EXPECT_TRUE(std::isfinite(stable_sigmoid(-1000.0)));
  EXPECT_GE(stable_sigmoid(-1000.0), 0.0);
}

TEST(OpsTest, BceWithLogitsValues) {
  EXPECT_NEAR(bce_logit_value(0.0, 0.0), std::log(2.0), 1e-12);
  EXPECT_NEAR(bce_logit_value(2.0, 1.0), 0.126928011043, 1e-9);
  EXPECT_NEAR(bce_logit_value(1000.0, 1.0), 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(bce_logit_value(-1000.0, 1.0)));
  Graph<double> g;
  auto z = g.constant(T({1}, 1.0));
  EXPECT_THROW(bce_with_logits(z, g.constant(T({1}, 1.5))), TargetOutOfRange);
}

TEST(OpsTest, Reductions) {
  Graph<double> g;
  EXPECT_DOUBLE_EQ(mean_all(g.constant(T({3}, std::vector<double>{1, 2, 3}))).value().item(), 2);
  auto m = g.constant(T({2, 2}, std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(sum(m, {0}).value(), T({2}, std::vector<double>{4, 6}));
  EXPECT_EQ(sum(m, {1}, true).value(), T({2, 1}, std::vector<double>{3, 7}));
  EXPECT_THROW(sum(m, {2}), AxisOutOfRange);
}

TEST(OpsTest, MeanGradientIsUniform) {
  Graph<double> g;
  auto x = g.variable(T({4}, std::vector<double>{1, 2, 3, 4}));
  g.backward(scale(mean_all(x), 3.0));
  EXPECT_EQ(*g.grad(x), T({4}, 0.75));
}

TEST(OpsTest, SoftmaxRowsSumToOne) {
  Graph<double> g;
  auto x = g.constant(T({2, 3}, std::vector<double>{1, 2, 3, -500, 0, 500}));
  const T s = softmax_last(x).value();
  EXPECT_NEAR(s.at({0, 0}) + s.at({0, 1}) + s.at({0, 2}), 1.0, 1e-12);
  EXPECT_NEAR(s.at({1, 2}), 1.0, 1e-12);
}

TEST(OpsTest, LayerNormNormalizesLastAxis) {
  Graph<double> g;
  auto x = g.constant(T({2, 4}, std::vector<double>{1, 2, 3, 4, -1, 0, 0, 5}));
  const T y = layer_norm(x, g.constant(T::ones({4})), g.constant(T::zeros({4}))).value();
  for (Index r = 0; r < 2; ++r) {
    double mu = 0, var = 0;
    for (Index c = 0; c < 4; ++c) mu += y.at({r, c}) / 4;
    for (Index c = 0; c < 4; ++c) var += (y.at({r, c}) - mu) * (y.at({r, c}) - mu) / 4;
    EXPECT_NEAR(mu, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(OpsTest, PermuteAndNarrow) {
  Graph<double> g;
  auto x = g.constant(T({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5}));
  EXPECT_EQ(permute(x, {1, 0}).value(), T({3, 2}, std::vector<double>{0, 3, 1, 4, 2, 5}));
  EXPECT_EQ(narrow(x, 1, 1, 2).value(), T({2, 2}, std::vector<double>{1, 2, 4, 5}));
  EXPECT_EQ(select(x, 1).value(), T({3}, std::vector<double>{3, 4, 5}));
  EXPECT_THROW(narrow(x, 1, 2, 2), IndexOutOfRange);
}

TEST(OpsTest, NonFiniteForwardIsAnError) {
  Graph<double> g;
  auto x = g.constant(T({1}, -1.0));
  EXPECT_THROW(log(x), NonFinite);
  EXPECT_THROW(g.constant(T({1}, std::numeric_limits<double>::infinity())), NonFinite);
}

}  // namespace
}  // namespace fewshot
