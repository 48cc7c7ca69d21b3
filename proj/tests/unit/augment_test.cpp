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

#include <gtest/gtest.h>

#include "fewshot/film.hpp"
#include "fewshot/finite_diff.hpp"

namespace fewshot {
namespace {

using T = Tensor<double>;

FilmConfig tiny(Index n = 3, Index c = 4) {
  FilmConfig f;
  f.n = n;
  f.d_e = 5;
  f.hidden = 6;
  f.channels = c;
  return f;
}

TEST(FilmTest, ApplyExample) {
  Graph<double> g;
  auto f = g.constant(T({1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
  FilmParams<double> p{g.constant(T({2}, std::vector<double>{2, 0.5})),
                       g.constant(T({2}, std::vector<double>{1, -1}))};
  EXPECT_EQ(film_apply(f, p).value(), T({1, 2, 2}, std::vector<double>{3, 0, 7, 1}));
}

TEST(FilmTest, FreshModuleIsExactIdentity) {
  FilmAugmentor<double> aug(tiny(), 11);
  Graph<double> g;
  for (Index i = 0; i < aug.count(); ++i) {
    const auto p = film_params(g, aug, i);
    EXPECT_EQ(p.gamma.value(), T::ones({4}));
    EXPECT_EQ(p.beta.value(), T::zeros({4}));
  }
  auto f = g.constant(Rng(1, "f").normal_tensor<double>({2, 3, 4}));
  for (const auto& fa : augment_all(aug, f)) EXPECT_EQ(fa.value(), f.value());
}

TEST(FilmTest, BiasReadsThroughToGamma) {
  FilmAugmentor<double> aug(tiny(), 0);
  aug.out_bias()->value[2] = 0.25;
  aug.out_bias()->value[4 + 1] = -0.5;
  Graph<double> g;
  const auto p = film_params(g, aug, 1);
  EXPECT_DOUBLE_EQ(p.gamma.value()[2], 1.25);
  EXPECT_DOUBLE_EQ(p.gamma.value()[0], 1.0);
  EXPECT_DOUBLE_EQ(p.beta.value()[1], -0.5);
}

TEST(FilmTest, ZeroGammaGivesConstantMap) {
  Graph<double> g;
  auto f = g.constant(Rng(2, "f").normal_tensor<double>({2, 3, 2}));
  FilmParams<double> p{g.constant(T::zeros({2})), g.constant(T({2}, std::vector<double>{4, -3}))};
  const T out = film_apply(f, p).value();
  for (Index i = 0; i < out.numel(); ++i) EXPECT_DOUBLE_EQ(out[i], i % 2 == 0 ? 4.0 : -3.0);
}

TEST(FilmTest, SingleAugmentation) {
  FilmAugmentor<double> aug(tiny(1), 3);
  Graph<double> g;
  auto f = g.constant(Rng(3, "f").normal_tensor<double>({1, 2, 4}));
  ASSERT_EQ(augment_all(aug, f).size(), 1u);
  EXPECT_THROW(film_params(g, aug, 1), IndexOutOfRange);
}

TEST(FilmTest, Errors) {
  FilmConfig bad = tiny();
  bad.n = 0;
  EXPECT_THROW(FilmAugmentor<double>(bad, 0), ConfigMismatch);
  FilmAugmentor<double> aug(tiny(), 0);
  Graph<double> g;
  EXPECT_THROW(augment_all(aug, g.constant(T({1, 2, 5}))), ShapeMismatch);
}

TEST(FilmTest, ParameterCount) {
  FilmAugmentor<double> aug(tiny(), 0);
  ParameterRegistry<double> reg;
  aug.register_into(reg);
  EXPECT_EQ(count_trainable(reg).aug, 3 * 5 + (5 * 6 + 6) + (6 * 8 + 8));
  for (const auto& p : aug.parameters()) EXPECT_EQ(p->tag, ParamTag::aug);
}

// The generator gradients through E and psi agree with finite differences.
TEST(FilmTest, GeneratorGradient) {
  FilmAugmentor<double> aug(tiny(2, 3), 5);
  Rng rng(7, "perturb");
  for (const auto& p : aug.parameters())
    for (Index i = 0; i < p->value.numel(); ++i) p->value[i] += 0.3 * rng.normal();
  const T f0 = rng.normal_tensor<double>({2, 2, 3});
  const T probe = rng.normal_tensor<double>({2, 2, 3});
  const auto params = aug.parameters();
  const auto loss = [&](Graph<double>& g) {
    auto f = g.constant(f0);
    Var<double> acc = g.constant(T::scalar(0.0));
    for (const auto& fa : augment_all(aug, f)) acc = add(acc, sum_all(mul(square(fa), g.constant(probe))));
    return acc;
  };
  Graph<double> g;
  const auto l = loss(g);
  for (const auto& p : params) p->zero_grad();
  g.backward(l);
  Index total = 0;
  for (const auto& p : params) total += p->value.numel();
  Eigen::VectorXd theta(total), analytic(total);
  Index at = 0;
  for (const auto& p : params) {
    theta.segment(at, p->value.numel()) = p->value.flat();
    analytic.segment(at, p->value.numel()) = p->grad.flat();
    at += p->value.numel();
  }
  const auto f = [&](const Eigen::VectorXd& t) {
    Index off = 0;
    for (const auto& p : params) {
      p->value.flat() = t.segment(off, p->value.numel());
      off += p->value.numel();
    }
    Graph<double> h;
    return loss(h).value().item();
  };
  const Eigen::VectorXd numeric = finite_diff_grad(f, theta);
  EXPECT_LT(relative_error(analytic, numeric), 1e-6);
}

}  // namespace
}  // namespace fewshot
