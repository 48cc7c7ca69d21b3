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

#include "fewshot/training.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include <json.hpp>

#include "fewshot/rng.hpp"

namespace fewshot {

namespace fs = std::filesystem;

std::string format_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

void check_layout(const std::vector<Instance>& data, const TrainConfig& cfg, const char* what) {
  for (const Instance& inst : data) {
    if (inst.features.dim() != 2 || inst.features.size(0) != cfg.model.tokens ||
        inst.features.size(1) != cfg.model.input_dim)
      throw ConfigError(std::string(what) + " instance " + inst.id + " has features " +
                        shape_str(inst.features.shape()) + ", model expects [" +
                        std::to_string(cfg.model.tokens) + ", " +
                        std::to_string(cfg.model.input_dim) + "]");
  }
}

}  // namespace

Datasets prepare_data(const TrainConfig& cfg) {
  std::vector<Instance> corpus;
  Datasets d;
  if (cfg.data.train_path.empty()) {
    corpus = gen_synthetic(cfg.data.task, cfg.data.pool, 0);
  } else {
    corpus = import_jsonl(cfg.data.train_path, cfg.model.classes);
    check_layout(corpus, cfg, "training");
  }
  if (cfg.data.val_path.empty()) {
    if (!cfg.data.train_path.empty())
      throw ConfigError("data.val must be set when data.train is a file");
    d.val = gen_synthetic(cfg.data.task, cfg.data.val_size, cfg.data.pool);
  } else {
    d.val = import_jsonl(cfg.data.val_path, cfg.model.classes);
    check_layout(d.val, cfg, "validation");
  }
  if (corpus.empty() || d.val.empty()) throw ConfigError("empty training or validation data");
  d.selection = kshot_sample(corpus, SamplerConfig{cfg.data.k_shot, cfg.run.seed});
  d.train = d.selection.gather(corpus);
  return d;
}

TrainingState::TrainingState(const TrainConfig& cfg)
    : cfg_(cfg), objective_(resolve_objective(cfg)), optim_(cfg.optim) {
  cfg_.augment.channels = cfg_.model.width;
  encoder_ = std::make_unique<Encoder<Real>>(cfg_.model, cfg_.backbone_seed, cfg_.run.seed);
  for (const auto& p : encoder_->registry().all()) params_.add(p);
  if (objective_.use_film) {
    film_ = std::make_unique<FilmAugmentor<Real>>(cfg_.augment, cfg_.run.seed);
    film_->register_into(params_);
  }
}

std::vector<std::size_t> batch_rows(const TrainConfig& cfg, long long step, std::size_t n_train) {
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng(cfg.run.seed, "batch", static_cast<std::uint64_t>(step)).shuffle(order);
  order.resize(std::min<std::size_t>(n_train, static_cast<std::size_t>(cfg.run.batch_size)));
  return order;
}

LossReport<Real> train_step(TrainingState& state, const Tensor<Real>& tokens,
                            const Tensor<Real>& labels) {
  const long long step = state.step + 1;
  const auto where = [&](const std::string& m) { return "step " + std::to_string(step) + ": " + m; };
  LossReport<Real> report;
  try {
    Graph<Real> g;
    const PredictionBundle<Real> bundle = state.encoder().encode(g, tokens, state.film());
    const ResolvedObjective& obj = state.objective();
    ObjectiveTerms<Real> terms = total_loss(bundle, labels, obj.weights, obj.options);
    report = terms.report;
    const std::pair<const char*, double> parts[] = {{"anchor bce", report.bce},
                                                    {"distill", report.distill},
                                                    {"weighted aug bce", report.bce_w},
                                                    {"entropy", report.ent},
                                                    {"total", report.total}};
    for (const auto& [name, v] : parts)
      if (!std::isfinite(v)) throw NonFinite(std::string("loss term ") + name);
    state.params().zero_grad();
    g.backward(terms.total);
  } catch (const NonFinite& e) {
    throw NonFinite(where(e.what()));
  }
  state.optimizer().step(state.params().trainable());
  for (const auto& p : state.params().trainable())
    if (!p->value.all_finite()) throw NonFinite(where("parameter " + p->name + " after update"));
  state.step = step;
  return report;
}

EvalResult evaluate(const Encoder<Real>& encoder, const std::vector<Instance>& data, Index chunk) {
  if (data.empty()) throw ConfigError("empty evaluation set");
  const Index n = static_cast<Index>(data.size());
  const Index k = encoder.config().classes;
  Tensor<double> scores({n, k});
  Tensor<double> labels({n, k});
  for (Index start = 0; start < n; start += chunk) {
    const Index len = std::min(chunk, n - start);
    std::vector<std::size_t> rows(len);
    std::iota(rows.begin(), rows.end(), static_cast<std::size_t>(start));
    Tensor<Real> tokens, y;
    make_batch(data, rows, tokens, y);
    const Tensor<Real> z = encoder.logits(tokens);
    scores.flat().segment(start * k, len * k) = z.flat().cast<double>();
    labels.flat().segment(start * k, len * k) = y.flat().cast<double>();
  }
  return mean_ap(scores, labels);
}

Checkpoint make_checkpoint(const TrainingState& state) {
  Checkpoint c;
  c.step = state.step;
  c.rng_seed = state.config().run.seed;
  c.rng_counter = static_cast<std::uint64_t>(state.step);
  c.metrics["best_map"] = state.best_map;
  c.metrics["initial_map"] = state.initial_map;
  c.counters["best_step"] = state.best_step;
  c.config_text = to_config_text(state.config());
  for (const auto& p : state.params().all()) c.put(p->name, p->value);
  for (const auto& [name, st] : state.optimizer().state()) {
    c.put("optim.m." + name, st.m);
    c.put("optim.v." + name, st.v);
    c.counters["optim.step." + name] = st.step;
  }
  return c;
}

void restore_checkpoint(TrainingState& state, const Checkpoint& ckpt) {
  if (ckpt.rng_seed != state.config().run.seed)
    throw CheckpointError("checkpoint was written with seed " + std::to_string(ckpt.rng_seed) +
                          ", run uses " + std::to_string(state.config().run.seed));
  std::size_t consumed = 0;
  for (const auto& p : state.params().all()) {
    p->value = ckpt.get<Real>(p->name, p->value.shape());
    p->zero_grad();
    ++consumed;
  }
  auto& opt = state.optimizer().state();
  opt.clear();
  for (const auto& p : state.params().trainable()) {
    const std::string m = "optim.m." + p->name;
    if (!ckpt.find(m)) continue;
    AdamState<Real> st;
    st.m = ckpt.get<Real>(m, p->value.shape());
    st.v = ckpt.get<Real>("optim.v." + p->name, p->value.shape());
    auto it = ckpt.counters.find("optim.step." + p->name);
    if (it == ckpt.counters.end()) throw CheckpointError("missing optimizer step for " + p->name);
    st.step = it->second;
    opt.emplace(p->name, std::move(st));
    consumed += 2;
  }
  if (consumed != ckpt.tensors.size())
    throw CheckpointError("checkpoint holds tensors this model does not have");
  state.step = ckpt.step;
  const auto metric = [&](const char* key) {
    auto it = ckpt.metrics.find(key);
    if (it == ckpt.metrics.end()) throw CheckpointError(std::string("missing metric ") + key);
    return it->second;
  };
  state.best_map = metric("best_map");
  state.initial_map = metric("initial_map");
  auto it = ckpt.counters.find("best_step");
  state.best_step = it == ckpt.counters.end() ? -1 : it->second;
}

namespace {

void write_summary(const RunSummary& s, const fs::path& path) {
  nlohmann::json j;
  j["variant"] = s.variant;
  j["seed"] = s.seed;
  j["trainable_params"] = s.trainable.total;
  j["trainable"] = {{"lora", s.trainable.lora}, {"aug", s.trainable.aug}, {"head", s.trainable.head}};
  j["initial_map"] = s.initial_map;
  j["best_map"] = s.best_map;
  j["best_step"] = s.best_step;
  j["final_map"] = s.final_map;
  j["steps"] = s.steps;
  std::ofstream os(path);
  os << j.dump(2) << '\n';
}

}  // namespace

RunSummary run_training(const TrainConfig& cfg, const Datasets& data, const RunOptions& opts) {
  cfg.validate();
  if (data.train.empty()) throw ConfigError("empty support set");
  fs::create_directories(opts.out);
  {
    std::ofstream os(opts.out / "config.toml");
    os << to_config_text(cfg);
  }
  write_counts_csv(data.selection, opts.out / "support_counts.csv");

  TrainingState st(cfg);
  if (opts.resume) restore_checkpoint(st, load_checkpoint(*opts.resume));

  std::ofstream log(opts.out / "log.csv");
  log << "step,total,bce,distill,bce_w,ent,mean_w,min_w\n" << std::flush;
  std::ofstream evals(opts.out / "eval.csv");
  evals << "step,map\n";

  const fs::path best_dir = opts.out / "checkpoints" / "best";
  const auto run_eval = [&](long long step) {
    const double map = evaluate(st.encoder(), data.val).map;
    evals << step << ',' << format_real(map) << '\n' << std::flush;
    if (map > st.best_map) {
      st.best_map = map;
      st.best_step = step;
      save_checkpoint(make_checkpoint(st), best_dir);
    }
    return map;
  };

  double last_map = 0.0;
  if (!opts.resume) {
    st.initial_map = run_eval(0);
    last_map = st.initial_map;
  }

  const Index steps = cfg.run.steps;
  const bool nothing_to_run = st.step >= steps;
  Tensor<Real> tokens, labels;
  for (long long step = st.step + 1; step <= steps; ++step) {
    make_batch(data.train, batch_rows(cfg, step, data.train.size()), tokens, labels);
    const LossReport<Real> r = train_step(st, tokens, labels);
    log << step << ',' << format_real(r.total) << ',' << format_real(r.bce) << ','
        << format_real(r.distill) << ',' << format_real(r.bce_w) << ',' << format_real(r.ent)
        << ',' << format_real(r.mean_w) << ',' << format_real(r.min_w) << '\n'
        << std::flush;
    if (step % cfg.run.eval_every == 0 || step == steps) {
      last_map = run_eval(step);
      if (!opts.quiet)
        std::cerr << "step " << step << " loss " << r.total << " val mAP " << last_map << '\n';
    }
  }
  if (nothing_to_run) last_map = evaluate(st.encoder(), data.val).map;
  save_checkpoint(make_checkpoint(st), opts.out / "checkpoints" / "final");

  RunSummary s;
  s.variant = variant_name(cfg.run.variant);
  s.seed = cfg.run.seed;
  s.trainable = st.trainable_counts();
  s.initial_map = st.initial_map;
  s.best_map = st.best_map;
  s.best_step = st.best_step;
  s.final_map = last_map;
  s.steps = st.step;
  write_summary(s, opts.out / "summary.json");
  return s;
}

RunSummary run_training(const TrainConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  return run_training(cfg, prepare_data(cfg), opts);
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "variant,seed,map,best_map,initial_map,trainable_params,status\n";
  std::vector<std::string> order;
  for (const AblationRow& r : rows) {
    if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
    if (r.ok)
      os << r.variant << ',' << r.seed << ',' << format_real(r.summary.final_map) << ','
         << format_real(r.summary.best_map) << ',' << format_real(r.summary.initial_map) << ','
         << r.summary.trainable.total << ",ok\n";
    else
      os << r.variant << ',' << r.seed << ",,,,,failed\n";
  }
  for (const std::string& v : order) {
    double map = 0, best = 0, init = 0;
    Index params = 0;
    int n = 0;
    for (const AblationRow& r : rows) {
      if (r.variant != v || !r.ok) continue;
      map += r.summary.final_map;
      best += r.summary.best_map;
      init += r.summary.initial_map;
      params = r.summary.trainable.total;
      ++n;
    }
    if (n == 0) {
      os << v << ",mean,,,,,failed\n";
      continue;
    }
    os << v << ",mean," << format_real(map / n) << ',' << format_real(best / n) << ','
       << format_real(init / n) << ',' << params << ",ok\n";
  }
}

std::vector<AblationRow> run_ablation(const TrainConfig& base,
                                      const std::vector<VariantSpec>& variants,
                                      const std::vector<std::uint64_t>& seeds, const fs::path& out) {
  if (variants.empty() || seeds.empty())
    throw ConfigError("ablation needs at least one variant and one seed");
  fs::create_directories(out);
  std::vector<AblationRow> rows;
  for (const VariantSpec& v : variants) {
    for (std::uint64_t seed : seeds) {
      AblationRow row;
      row.variant = v.label();
      row.seed = seed;
      TrainConfig cfg = base;
      cfg.run.variant = v.variant;
      cfg.run.seed = seed;
      if (v.n_aug) cfg.augment.n = *v.n_aug;
      std::string dir = row.variant;
      std::replace(dir.begin(), dir.end(), ':', '_');
      try {
        RunOptions opts;
        opts.out = out / dir / ("seed-" + std::to_string(seed));
        row.summary = run_training(cfg, opts);
        row.ok = true;
      } catch (const std::exception& e) {
        row.error = e.what();
        std::cerr << "run " << row.variant << " seed " << seed << " failed: " << e.what() << '\n';
      }
      rows.push_back(std::move(row));
      write_ablation_csv(rows, out / "ablation.csv");
    }
  }
  return rows;
}

}  // namespace fewshot
