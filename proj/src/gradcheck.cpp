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

#include "fewshot/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>

#include "fewshot/encoder.hpp"
#include "fewshot/film.hpp"
#include "fewshot/finite_diff.hpp"
#include "fewshot/objective.hpp"

namespace fewshot {

bool GradcheckReport::passed() const {
  if (cases.empty()) return false;
  for (const GradcheckCase& c : cases)
    if (!c.passed) return false;
  return true;
}

namespace {

using Model = Encoder<double>;
using Film = FilmAugmentor<double>;

enum class Term { total, bce, distill, bce_w, ent };

const char* term_name(Term t) {
  switch (t) {
    case Term::total: return "total";
    case Term::bce: return "bce";
    case Term::distill: return "distill";
    case Term::bce_w: return "bce_w";
    case Term::ent: return "ent";
  }
  return "?";
}

const Var<double>& pick(const ObjectiveTerms<double>& t, Term term) {
  switch (term) {
    case Term::total: return t.total;
    case Term::bce: return t.bce;
    case Term::distill: return t.distill;
    case Term::bce_w: return t.bce_w;
    case Term::ent: return t.ent;
  }
  return t.total;
}

struct Problem {
  EncoderConfig model;
  FilmConfig film;
  std::unique_ptr<Model> encoder;
  std::unique_ptr<Film> aug;
  std::vector<ParamPtr<double>> phi;
  Tensor<double> tokens;
  Tensor<double> labels;
  LossWeights weights;
};

Problem make_problem(std::uint64_t seed) {
  Problem p;
  p.model.layers = 2;
  p.model.width = 8;
  p.model.heads = 2;
  p.model.tokens = 4;
  p.model.l_aug = 0;
  p.model.l_lora = 0;
  p.model.rank = 2;
  p.model.classes = 3;
  p.model.input_dim = 5;
  p.film.n = 2;
  p.film.d_e = 4;
  p.film.hidden = 8;
  p.film.channels = p.model.width;
  p.encoder = std::make_unique<Model>(p.model, seed, seed + 1);
  p.aug = std::make_unique<Film>(p.film, seed + 2);
  for (const auto& q : p.encoder->registry().trainable()) p.phi.push_back(q);
  for (const auto& q : p.aug->parameters()) p.phi.push_back(q);

  Rng rng(seed, "gradcheck:perturb");
  for (const auto& q : p.phi) {
    const double sd = q->name.find("film.mlp.1") != std::string::npos ? 0.3 : 0.2;
    q->value.flat() += rng.normal_tensor<double>(q->value.shape(), sd).flat();
  }
  p.tokens = Rng(seed, "gradcheck:tokens").normal_tensor<double>({2, p.model.tokens, p.model.input_dim});
  p.labels = Tensor<double>({2, p.model.classes}, std::vector<double>{1, 0, 1, 0, 1, 0});
  return p;
}

Eigen::VectorXd gather(const std::vector<ParamPtr<double>>& phi) {
  Index n = 0;
  for (const auto& q : phi) n += q->value.numel();
  Eigen::VectorXd theta(n);
  Index at = 0;
  for (const auto& q : phi) {
    theta.segment(at, q->value.numel()) = q->value.flat();
    at += q->value.numel();
  }
  return theta;
}

void scatter(const std::vector<ParamPtr<double>>& phi, const Eigen::VectorXd& theta) {
  Index at = 0;
  for (const auto& q : phi) {
    q->value.flat() = theta.segment(at, q->value.numel());
    at += q->value.numel();
  }
}

GradcheckCase check_term(Problem& p, Term term, const ObjectiveOptions& opts,
                         const DetachedTargets<double>& pinned, const GradcheckOptions& go) {
  const Eigen::VectorXd base = gather(p.phi);

  Graph<double> g;
  const auto bundle = p.encoder->encode(g, p.tokens, p.aug.get());
  const auto terms = total_loss(bundle, p.labels, p.weights, opts, &pinned);
  for (const auto& q : p.phi) q->zero_grad();
  g.backward(pick(terms, term));
  Eigen::VectorXd analytic = Eigen::VectorXd::Zero(base.size());
  std::vector<std::string> owner(base.size());
  Index at = 0;
  for (const auto& q : p.phi) {
    if (q->has_grad()) analytic.segment(at, q->value.numel()) = q->grad.flat();
    for (Index i = 0; i < q->value.numel(); ++i) owner[at + i] = q->name;
    at += q->value.numel();
  }

  const ScalarFunction f = [&](const Eigen::VectorXd& theta) {
    scatter(p.phi, theta);
    Graph<double> fg;
    const auto b = p.encoder->encode(fg, p.tokens, p.aug.get());
    const auto t = total_loss(b, p.labels, p.weights, opts, &pinned);
    return pick(t, term).value().item();
  };
  const Eigen::VectorXd numeric = finite_diff_grad(f, base, go.h);
  scatter(p.phi, base);

  GradcheckCase c;
  c.name = std::string(term_name(term)) + (opts.differentiate_weights ? " (through w)" : "");
  c.coordinates = base.size();
  for (Index i = 0; i < base.size(); ++i) {
    const double denom =
        std::max({std::abs(analytic[i]), std::abs(numeric[i]), kRelativeErrorFloor});
    const double err = std::abs(analytic[i] - numeric[i]) / denom;
    if (i == 0 || err > c.max_rel_error) {
      c.max_rel_error = err;
      c.worst_param = owner[i];
    }
  }
  c.passed = c.max_rel_error < go.tolerance;
  return c;
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& go) {
  const auto start = std::chrono::steady_clock::now();
  GradcheckReport report;
  Problem p = make_problem(go.seed);

  DetachedTargets<double> pinned;
  {
    Graph<double> g;
    const auto bundle = p.encoder->encode(g, p.tokens, p.aug.get());
    const auto terms = total_loss(bundle, p.labels, p.weights);
    pinned.p_orig = terms.p_orig;
    pinned.w = terms.report.stats.w;
  }

  const Term all[] = {Term::total, Term::bce, Term::distill, Term::bce_w, Term::ent};
  ObjectiveOptions plain;
  for (Term t : all) report.cases.push_back(check_term(p, t, plain, pinned, go));

  ObjectiveOptions through;
  through.differentiate_weights = true;
  for (Term t : {Term::total, Term::bce_w}) report.cases.push_back(check_term(p, t, through, pinned, go));

  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

void print_gradcheck(const GradcheckReport& report, std::ostream& os) {
  for (const GradcheckCase& c : report.cases) {
    os << (c.passed ? "ok   " : "FAIL ") << std::left << std::setw(20) << c.name
       << " max rel err " << std::scientific << std::setprecision(3) << c.max_rel_error
       << " over " << c.coordinates << " coords (worst in " << c.worst_param << ")\n";
  }
  os << std::defaultfloat << "gradcheck " << (report.passed() ? "passed" : "failed") << " in "
     << std::fixed << std::setprecision(2) << report.seconds << " s\n"
     << std::defaultfloat;
}

}  // namespace fewshot
