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

// End-to-end acceptance checks. Prints one PASS/FAIL line per check and
// exits non-zero if any check fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>

#include "fewshot/checkpoint.hpp"
#include "fewshot/gradcheck.hpp"
#include "fewshot/training.hpp"

namespace fs = std::filesystem;
using namespace fewshot;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 6) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome gradient_suite() {
  const GradcheckReport r = run_gradcheck();
  double worst = 0;
  std::string where;
  for (const auto& c : r.cases)
    if (c.max_rel_error >= worst) {
      worst = c.max_rel_error;
      where = c.name + " @ " + c.worst_param;
    }
  const bool fast = r.seconds < 60.0;
  return {r.passed() && fast, std::to_string(r.cases.size()) + " cases, max rel err " +
                                  fmt(worst, 3) + " (" + where + "), " + fmt(r.seconds, 3) + " s"};
}

Outcome init_identity(const TrainConfig& cfg) {
  const Datasets data = prepare_data(cfg);
  Encoder<double> enc(cfg.model, cfg.backbone_seed, cfg.run.seed);
  FilmConfig fc = cfg.augment;
  fc.channels = cfg.model.width;
  FilmAugmentor<double> film(fc, cfg.run.seed);
  Tensor<float> tokens_f, labels_f;
  std::vector<std::size_t> rows(32);
  std::iota(rows.begin(), rows.end(), 0);
  make_batch(data.val, rows, tokens_f, labels_f);
  const Tensor<double> tokens = tokens_f.cast<double>();
  const Tensor<double> labels = labels_f.cast<double>();

  Graph<double> g;
  const auto bundle = enc.encode(g, tokens, &film);
  double max_dz = 0;
  for (const auto& z : bundle.z_aug) max_dz = std::max(max_dz, max_abs_diff(z.value(), bundle.z_orig.value()));
  const auto t = total_loss(bundle, labels, cfg.loss);
  const double min_w = t.report.stats.w.flat().minCoeff();
  const double max_w = t.report.stats.w.flat().maxCoeff();

  long double h = 0;
  const Tensor<double>& z = bundle.z_orig.value();
  for (Index i = 0; i < z.numel(); ++i) {
    const long double p = 1.0L / (1.0L + std::exp(-static_cast<long double>(z[i])));
    h -= p * std::log(p) + (1 - p) * std::log1p(-p);
  }
  h /= z.numel();
  const double dd = std::abs(t.report.distill - static_cast<double>(h));
  const bool pass = bundle.z_aug.size() == std::size_t(cfg.augment.n) && max_dz <= 1e-6 &&
                    min_w == 1.0 && max_w == 1.0 && dd <= 1e-6;
  return {pass, "max|z_aug - z_orig| " + fmt(max_dz, 3) + ", w in [" + fmt(min_w, 10) + ", " +
                    fmt(max_w, 10) + "], |distill - mean H| " + fmt(dd, 3)};
}

Outcome group_weight_oracle() {
  // Reference values from a 50-digit evaluation of the weighting formulas.
  const auto col = [](std::vector<double> d) {
    const auto n = static_cast<Index>(d.size());
    return Tensor<double>({n, 1}, std::move(d));
  };
  double err = 0;
  const auto two = group_weights(col({0.2, 0.6}), 1.5, 1e-6);
  err = std::max({err, std::abs(two.w[0] - 0.800737), std::abs(two.w[1] - 0.800737)});
  const auto three = group_weights(col({0.1, 0.2, 0.6}), 1.5, 1e-6);
  const double ref[] = {0.826566895236, 0.953497375196, 0.651441642298};
  for (Index i = 0; i < 3; ++i) err = std::max(err, std::abs(three.w[i] - ref[i]));

  bool bounds = true, at_mean = true, monotone = true;
  Rng rng(0, "acceptance:weights");
  double shift_err = 0, wide_err = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<double> d({6, 4});
    for (Index i = 0; i < d.numel(); ++i) d[i] = rng.uniform();
    const auto st = group_weights(d, 1.5, 1e-6);
    for (Index i = 0; i < d.numel(); ++i) {
      bounds = bounds && st.w[i] > 0 && st.w[i] <= 1;
      for (Index j = 0; j < d.numel(); ++j)
        if (i % 4 == j % 4 && std::abs(st.z[i]) < std::abs(st.z[j]))
          monotone = monotone && st.w[i] > st.w[j];
    }
    Tensor<double> shifted = d;
    shifted.flat().array() += 1.75;
    const auto sh = group_weights(shifted, 1.5, 1e-6);
    shift_err = std::max(shift_err, max_abs_diff(sh.w, st.w));
    const auto wide = group_weights(d, 1e6, 1e-6);
    wide_err = std::max(wide_err, (1.0 - wide.w.flat().array()).abs().maxCoeff());
  }
  at_mean = group_weights(col({0.1, 0.3, 0.5}), 1.5, 1e-6).w[1] == 1.0 &&
            group_weights(col({0.4, 0.4, 0.4}), 1.5, 1e-6).w[0] == 1.0;
  const bool pass = err < 1e-5 && bounds && at_mean && monotone && shift_err < 1e-9 && wide_err < 1e-6;
  return {pass, "max oracle err " + fmt(err, 3) + ", bounds " + (bounds ? "ok" : "violated") +
                    ", w(z=0)=1 " + (at_mean ? "ok" : "no") + ", monotone " +
                    (monotone ? "ok" : "no") + ", shift err " + fmt(shift_err, 3) +
                    ", s=1e6 max|1-w| " + fmt(wide_err, 3)};
}

// z_orig gets a private bias that no augmented path sees: the distillation
// gradient must not reach it, and the gradient on shared parameters must
// match a hand-built loss with constant targets.
Outcome detach_semantics() {
  EncoderConfig mc;
  mc.layers = 2;
  mc.width = 8;
  mc.heads = 2;
  mc.tokens = 4;
  mc.l_aug = 0;
  mc.l_lora = 0;
  mc.rank = 2;
  mc.classes = 3;
  mc.input_dim = 5;
  FilmConfig fc;
  fc.n = 2;
  fc.d_e = 4;
  fc.hidden = 8;
  fc.channels = 8;
  Encoder<double> enc(mc, 1, 2);
  FilmAugmentor<double> film(fc, 3);
  std::vector<ParamPtr<double>> phi = enc.registry().trainable();
  for (const auto& p : film.parameters()) phi.push_back(p);
  Rng rng(4, "acceptance:detach");
  for (const auto& p : phi) p->value.flat() += rng.normal_tensor<double>(p->value.shape(), 0.2).flat();
  auto private_bias = make_param("orig.bias", ParamTag::lora, rng.normal_tensor<double>({3}));
  const Tensor<double> tokens = rng.normal_tensor<double>({3, 4, 5});
  const Tensor<double> labels({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 1, 1, 0, 1});

  const auto grads = [&](bool manual) {
    for (const auto& p : phi) p->zero_grad();
    private_bias->zero_grad();
    Graph<double> g;
    auto bundle = enc.encode(g, tokens, &film);
    bundle.z_orig = add(bundle.z_orig, g.parameter(private_bias));
    if (manual) {
      const Var<double> p = g.constant(detached_probabilities(bundle.z_orig.value()));
      std::vector<Var<double>> terms;
      for (const auto& z : bundle.z_aug) terms.push_back(bce_with_logits(z, p));
      g.backward(mean_all(stack(terms)));
    } else {
      g.backward(total_loss(bundle, labels, LossWeights{}).distill);
    }
    std::vector<Tensor<double>> out;
    for (const auto& p : phi) out.push_back(p->has_grad() ? p->grad : Tensor<double>::zeros_like(p->value));
    return std::make_pair(out, private_bias->has_grad() ? private_bias->grad.flat().cwiseAbs().maxCoeff() : 0.0);
  };
  const auto [auto_g, leak] = grads(false);
  const auto [manual_g, manual_leak] = grads(true);
  double diff = 0, norm = 0;
  for (std::size_t i = 0; i < auto_g.size(); ++i) {
    diff = std::max(diff, max_abs_diff(auto_g[i], manual_g[i]));
    norm = std::max(norm, auto_g[i].flat().cwiseAbs().maxCoeff());
  }
  const bool pass = leak == 0.0 && manual_leak == 0.0 && diff <= 1e-12 && norm > 0;
  return {pass, "z_orig-only gradient " + fmt(leak, 3) + ", vs manual constant targets " +
                    fmt(diff, 3) + " (max shared grad " + fmt(norm, 3) + ")"};
}

Outcome frozen_immutability(const TrainConfig& cfg) {
  const Datasets data = prepare_data(cfg);
  TrainingState st(cfg);
  std::map<std::string, Tensor<Real>> before;
  for (const auto& p : st.params().all()) before[p->name] = p->value;
  Tensor<Real> tokens, labels;
  for (long long step = 1; step <= 100; ++step) {
    make_batch(data.train, batch_rows(cfg, step, data.train.size()), tokens, labels);
    train_step(st, tokens, labels);
  }
  Index frozen = 0, frozen_changed = 0, trainable = 0, trainable_changed = 0;
  for (const auto& p : st.params().all()) {
    const Tensor<Real>& b = before.at(p->name);
    const bool same = std::memcmp(b.data(), p->value.data(), sizeof(Real) * b.numel()) == 0;
    if (p->trainable()) {
      ++trainable;
      trainable_changed += same ? 0 : 1;
    } else {
      ++frozen;
      frozen_changed += same ? 0 : 1;
    }
  }
  return {frozen_changed == 0 && trainable_changed == trainable,
          std::to_string(frozen) + " frozen tensors, " + std::to_string(frozen_changed) +
              " changed; " + std::to_string(trainable_changed) + "/" + std::to_string(trainable) +
              " trainable tensors moved"};
}

double reference_ap(const std::vector<double>& s, const std::vector<std::uint8_t>& l) {
  std::vector<double> thresholds(s.begin(), s.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double sum = 0, prev_tp = 0, positives = 0;
  for (std::uint8_t v : l) positives += v;
  for (double t : thresholds) {
    double n = 0, tp = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= t) {
        n += 1;
        tp += l[i];
      }
    if (tp > prev_tp) sum += (tp - prev_tp) * (tp / n);
    prev_tp = tp;
  }
  return sum / positives;
}

Outcome metric_oracle() {
  long cases = 0, mismatches = 0;
  for (int n = 1; n <= 6; ++n) {
    // Score patterns: every permutation of distinct values, and every binary tie pattern.
    std::vector<std::vector<double>> patterns;
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    do patterns.emplace_back(perm.begin(), perm.end());
    while (std::next_permutation(perm.begin(), perm.end()));
    for (int m = 0; m < (1 << n); ++m) {
      std::vector<double> s(n);
      for (int i = 0; i < n; ++i) s[i] = (m >> i) & 1;
      patterns.push_back(s);
    }
    for (const auto& s : patterns)
      for (int mask = 1; mask < (1 << n); ++mask) {
        std::vector<std::uint8_t> l(n);
        for (int i = 0; i < n; ++i) l[i] = (mask >> i) & 1;
        ++cases;
        if (average_precision(s, l) != reference_ap(s, l)) ++mismatches;
      }
  }
  const double hand = average_precision(std::vector<double>{0.9, 0.8, 0.1},
                                        std::vector<std::uint8_t>{1, 0, 1});
  return {mismatches == 0 && std::abs(hand - 5.0 / 6.0) < 1e-15,
          std::to_string(cases) + " configurations, " + std::to_string(mismatches) +
              " mismatches; [0.9,0.8,0.1]/[1,0,1] -> " + fmt(hand, 12)};
}

Outcome sampler_contract() {
  const auto make = [](std::vector<std::uint8_t> labels, std::size_t i) {
    Instance inst;
    inst.id = "i" + std::to_string(i);
    inst.labels = std::move(labels);
    inst.features = Tensor<float>({1, 1});
    return inst;
  };
  long violations = 0;
  bool deterministic = true;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    Rng rng(trial, "acceptance:corpus");
    const Index k = 2 + rng.below(9);
    const Index n = 10 + rng.below(150);
    std::vector<Instance> corpus;
    for (Index i = 0; i < n; ++i) {
      std::vector<std::uint8_t> l(k, 0);
      l[rng.below(k)] = 1;
      for (Index c = 0; c < k; ++c) l[c] = l[c] || rng.bernoulli(0.2);
      corpus.push_back(make(l, i));
    }
    const SamplerConfig sc{1 + rng.below(20), trial};
    const SupportSet s = kshot_sample(corpus, sc);
    for (Index c = 0; c < k; ++c)
      if (s.counts[c] < std::min(sc.k_shot, s.available[c])) ++violations;
    deterministic = deterministic && kshot_sample(corpus, sc).indices == s.indices;
  }
  bool exact = true;
  for (Index k_shot : {1, 2, 5, 15}) {
    std::vector<Instance> corpus;
    for (Index c = 0; c < 6; ++c)
      for (Index i = 0; i < 20; ++i) {
        std::vector<std::uint8_t> l(6, 0);
        l[c] = 1;
        corpus.push_back(make(l, corpus.size()));
      }
    const SupportSet s = kshot_sample(corpus, SamplerConfig{k_shot, 7});
    exact = exact && s.indices.size() == std::size_t(6 * k_shot) &&
            std::all_of(s.counts.begin(), s.counts.end(), [&](Index v) { return v == k_shot; });
  }
  return {violations == 0 && exact && deterministic,
          "100 multi-label trials, " + std::to_string(violations) + " under-filled classes; " +
              "single-label exact " + (exact ? "yes" : "no") + "; deterministic " +
              (deterministic ? "yes" : "no")};
}

Outcome learning_ordering(const TrainConfig& cfg, const fs::path& work) {
  const std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  const fs::path out = work / "learning";
  fs::remove_all(out);
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = run_ablation(cfg, {parse_variant_spec("full"), parse_variant_spec("lora_only")},
                                 seeds, out);
  const double per_run = seconds_since(t0) / double(rows.size());
  int ok = 0, beats_frozen = 0;
  double full = 0, lora = 0, frozen = 0;
  std::ostringstream per_seed;
  for (const auto& r : rows) {
    if (!r.ok) continue;
    ++ok;
    if (r.variant == "full") {
      full += r.summary.final_map;
      frozen += r.summary.initial_map;
      beats_frozen += r.summary.final_map > r.summary.initial_map ? 1 : 0;
      per_seed << ' ' << fmt(r.summary.final_map, 4);
    } else {
      lora += r.summary.final_map;
    }
  }
  full /= double(seeds.size());
  lora /= double(seeds.size());
  frozen /= double(seeds.size());
  const auto csv = read_lines(out / "ablation.csv");
  const bool grid = ok == 10 && csv.size() == 1 + 10 + 2;
  const bool pass = grid && beats_frozen == 5 && full >= lora && per_run < 600.0;
  return {pass, "(a) full > frozen in " + std::to_string(beats_frozen) + "/5 seeds [full:" +
                    per_seed.str() + "; frozen mean " + fmt(frozen, 4) + "]; (b) mean full " +
                    fmt(full, 4) + " vs lora_only " + fmt(lora, 4) + "; (c) grid " +
                    std::to_string(ok) + "/10 runs, " + std::to_string(csv.size()) +
                    " csv lines; " + fmt(per_run, 3) + " s per run"};
}

Outcome parameter_accounting(const TrainConfig& cfg) {
  const TrainingState st(cfg);
  const TrainableCounts c = st.trainable_counts();
  const Index lora_formula = (cfg.model.layers - cfg.model.l_lora) * 2 *
                             (cfg.model.rank * cfg.model.width + cfg.model.width * cfg.model.rank);
  const Index d = cfg.model.width;
  const Index aug_formula = cfg.augment.n * cfg.augment.d_e +
                            (cfg.augment.d_e * cfg.augment.hidden + cfg.augment.hidden) +
                            (cfg.augment.hidden * 2 * d + 2 * d);
  TrainConfig all = cfg;
  all.model.l_lora = 0;
  const TrainableCounts a = TrainingState(all).trainable_counts();
  TrainConfig frozen = cfg;
  frozen.run.variant = Variant::lora_only;
  TrainingState none(frozen);
  none.params().retag(ParamTag::lora, ParamTag::frozen);
  const Index zero = none.trainable_counts().total;
  const bool pass = c.lora == 3072 && c.aug == 10688 && c.lora == lora_formula &&
                    c.aug == aug_formula && c.total < a.total && a.lora == 6144 && zero == 0;
  return {pass, "lora " + std::to_string(c.lora) + ", aug " + std::to_string(c.aug) +
                    ", total " + std::to_string(c.total) + "; all-layers total " +
                    std::to_string(a.total) + "; fully frozen " + std::to_string(zero)};
}

Outcome determinism_checkpoint(TrainConfig cfg, const fs::path& work) {
  cfg.run.steps = 40;
  cfg.run.eval_every = 20;
  const fs::path base = work / "determinism";
  fs::remove_all(base);
  const auto run = [&](const TrainConfig& c, const std::string& name,
                       std::optional<fs::path> resume = std::nullopt) {
    RunOptions o;
    o.out = base / name;
    o.resume = resume;
    run_training(c, o);
    return o.out;
  };
  const fs::path a = run(cfg, "a");
  const fs::path b = run(cfg, "b");
  const bool same_log = slurp(a / "log.csv") == slurp(b / "log.csv") &&
                        slurp(a / "eval.csv") == slurp(b / "eval.csv");

  TrainConfig half = cfg;
  half.run.steps = 20;
  const fs::path h = run(half, "half");
  const fs::path rest = run(cfg, "rest", h / "checkpoints" / "final");
  const auto whole = read_lines(a / "log.csv");
  const auto tail = read_lines(rest / "log.csv");
  bool resumed = tail.size() == 21 && whole.size() == 41;
  for (std::size_t i = 1; resumed && i < tail.size(); ++i) resumed = tail[i] == whole[20 + i];
  const bool same_params = slurp(a / "checkpoints" / "final" / "tensors.bin") ==
                           slurp(rest / "checkpoints" / "final" / "tensors.bin");

  const fs::path c1 = base / "resave";
  save_checkpoint(load_checkpoint(a / "checkpoints" / "final"), c1);
  const bool roundtrip = slurp(c1 / "tensors.bin") == slurp(a / "checkpoints" / "final" / "tensors.bin") &&
                         slurp(c1 / "manifest.json") == slurp(a / "checkpoints" / "final" / "manifest.json");
  return {same_log && resumed && same_params && roundtrip,
          std::string("identical log.csv ") + (same_log ? "yes" : "no") +
              "; resume at 20 reproduces steps 21-40 " + (resumed ? "yes" : "no") +
              "; final tensors identical " + (same_params ? "yes" : "no") +
              "; save-load-save identical " + (roundtrip ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fewshot acceptance checks"};
  fs::path work = fs::temp_directory_path() / "fewshot_acceptance";
  fs::path config = fs::path(FEWSHOT_SOURCE_DIR) / "configs" / "toy.toml";
  std::vector<std::string> only;
  app.add_option("--work", work, "Scratch directory for training runs");
  app.add_option("--config", config, "Default toy config")->check(CLI::ExistingFile);
  app.add_option("--only", only, "Run only the named checks");
  CLI11_PARSE(app, argc, argv);

  const TrainConfig cfg = load_config(config);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
      {"gradient-suite", gradient_suite},
      {"init-identity", [&] { return init_identity(cfg); }},
      {"group-weight-oracle", group_weight_oracle},
      {"detach-semantics", detach_semantics},
      {"frozen-immutability", [&] { return frozen_immutability(cfg); }},
      {"metric-oracle", metric_oracle},
      {"sampler-contract", sampler_contract},
      {"learning-ordering", [&] { return learning_ordering(cfg, work); }},
      {"parameter-accounting", [&] { return parameter_accounting(cfg); }},
      {"determinism-checkpoint", [&] { return determinism_checkpoint(cfg, work); }},
  };

  int failed = 0;
  for (const auto& [name, fn] : checks) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << " ["
              << fmt(seconds_since(t0), 3) << " s]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
