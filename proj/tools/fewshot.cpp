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

// Command-line front end: train, eval, ablate, sample-support, gradcheck, generate.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fewshot/config.hpp"
#include "fewshot/gradcheck.hpp"
#include "fewshot/training.hpp"

namespace {

using namespace fewshot;

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kConfigError = 2;
constexpr int kNumericFailure = 3;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::uint64_t parse_seed(const std::string& s) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size() || s.front() == '-') throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad seed '" + s + "'");
  }
}

TrainConfig load_with_overrides(const std::string& path, const std::vector<std::string>& sets) {
  TrainConfig cfg = path.empty() ? TrainConfig{} : load_config(path);
  for (const std::string& s : sets) apply_override(cfg, s);
  return cfg;
}

int cmd_train(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out,
              const std::string& resume, const std::vector<std::string>& sets, bool verbose) {
  TrainConfig cfg = load_with_overrides(config, sets);
  if (seed) cfg.run.seed = *seed;
  cfg.validate();
  RunOptions opts;
  opts.out = out;
  opts.quiet = !verbose;
  if (!resume.empty()) opts.resume = resume;
  const RunSummary s = run_training(cfg, opts);
  std::cout << "variant " << s.variant << " seed " << s.seed << " trainable_params "
            << s.trainable.total << " initial_map " << format_real(s.initial_map) << " best_map "
            << format_real(s.best_map) << " (step " << s.best_step << ") final_map "
            << format_real(s.final_map) << '\n'
            << "wrote " << out << '\n';
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const TrainConfig cfg = parse_config(ckpt.config_text);
  TrainingState st(cfg);
  restore_checkpoint(st, ckpt);
  const std::vector<Instance> instances = import_jsonl(data, cfg.model.classes);
  for (const Instance& inst : instances)
    if (inst.features.shape() != Shape{cfg.model.tokens, cfg.model.input_dim})
      throw ConfigError("instance " + inst.id + " has features " + shape_str(inst.features.shape()));
  const EvalResult r = evaluate(st.encoder(), instances);
  if (out.empty()) {
    write_eval_csv(r, std::cout);
  } else {
    std::ofstream os(out);
    write_eval_csv(r, os);
    std::cout << "mAP " << format_real(r.map) << "\nwrote " << out << '\n';
  }
  return kOk;
}

int cmd_ablate(const std::string& config, const std::string& variants, const std::string& seeds,
               const std::string& out, const std::vector<std::string>& sets) {
  const TrainConfig cfg = load_with_overrides(config, sets);
  cfg.validate();
  std::vector<VariantSpec> specs;
  for (const std::string& v : split_list(variants)) specs.push_back(parse_variant_spec(v));
  std::vector<std::uint64_t> seed_list;
  for (const std::string& s : split_list(seeds)) seed_list.push_back(parse_seed(s));
  const auto rows = run_ablation(cfg, specs, seed_list, out);
  int failed = 0;
  for (const AblationRow& r : rows) failed += r.ok ? 0 : 1;
  std::cout << rows.size() - failed << " of " << rows.size() << " runs finished; wrote "
            << out << "/ablation.csv\n";
  return failed == 0 ? kOk : kFailure;
}

int cmd_sample_support(Index k, std::uint64_t seed, const std::string& in, const std::string& out,
                       const std::string& report, Index classes) {
  const std::vector<Instance> corpus = import_jsonl(in, classes);
  const SupportSet s = kshot_sample(corpus, SamplerConfig{k, seed});
  for (const std::string& w : s.warnings) std::cerr << "warning: " << w << '\n';
  for (Index c : s.empty_classes) std::cerr << "warning: class " << c << " has no instances\n";
  export_jsonl(s.gather(corpus), out);
  if (!report.empty()) write_counts_csv(s, report);
  std::cout << "selected " << s.indices.size() << " of " << corpus.size() << " instances\n";
  return kOk;
}

int cmd_generate(const std::string& config, const std::vector<std::string>& sets, Index n,
                 Index first, const std::string& out) {
  const TrainConfig cfg = load_with_overrides(config, sets);
  cfg.validate();
  export_jsonl(gen_synthetic(cfg.data.task, n, first), out);
  std::cout << "wrote " << n << " instances to " << out << '\n';
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed) {
  GradcheckOptions opts;
  opts.seed = seed;
  const GradcheckReport r = run_gradcheck(opts);
  print_gradcheck(r, std::cout);
  return r.passed() ? kOk : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-example adaptation with LoRA and learned feature augmentation"};
  app.require_subcommand(1);

  std::string config, out, resume, checkpoint, data, variants, seeds, in, report;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::uint64_t plain_seed = 0;
  Index k = 15, classes = 0, n = 800, first = 0;
  bool verbose = false;

  auto* train = app.add_subcommand("train", "Train one run");
  train->add_option("--config", config, "Config file")->required();
  train->add_option("--seed", seed, "Override run.seed");
  train->add_option("--out", out, "Output directory")->default_val("runs/train");
  train->add_option("--resume", resume, "Checkpoint directory to continue from");
  train->add_option("--set", sets, "Override, e.g. --set optim.lr=0.003");
  train->add_flag("--verbose", verbose, "Print evaluation progress");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a JSONL set");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  eval->add_option("--data", data, "JSONL instances")->required();
  eval->add_option("--out", out, "Write the per-class CSV here instead of stdout");

  auto* ablate = app.add_subcommand("ablate", "Run a variant x seed grid");
  ablate->add_option("--config", config, "Config file")->required();
  ablate->add_option("--variants", variants, "Comma-separated, e.g. full,lora_only,full:5")
      ->required();
  ablate->add_option("--seeds", seeds, "Comma-separated seeds")->required();
  ablate->add_option("--out", out, "Output directory")->default_val("runs/ablation");
  ablate->add_option("--set", sets, "Config override");

  auto* sample = app.add_subcommand("sample-support", "Draw a K-shot support set");
  sample->add_option("--k", k, "Target examples per class")->default_val(15);
  sample->add_option("--seed", plain_seed, "Sampler seed")->default_val(0);
  sample->add_option("--in", in, "Corpus JSONL")->required();
  sample->add_option("--out", out, "Support set JSONL")->required();
  sample->add_option("--report", report, "Per-class counts CSV");
  sample->add_option("--classes", classes, "Label width (default: max label + 1)");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  grad->add_option("--seed", plain_seed, "Seed for the tiny model")->default_val(0);

  auto* gen = app.add_subcommand("generate", "Write synthetic instances as JSONL");
  gen->add_option("--config", config, "Config file (data section)");
  gen->add_option("--set", sets, "Config override");
  gen->add_option("--n", n, "Number of instances")->default_val(800);
  gen->add_option("--first", first, "Index of the first instance")->default_val(0);
  gen->add_option("--out", out, "Output JSONL")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*train) return cmd_train(config, seed, out, resume, sets, verbose);
    if (*eval) return cmd_eval(checkpoint, data, out);
    if (*ablate) return cmd_ablate(config, variants, seeds, out, sets);
    if (*sample) return cmd_sample_support(k, plain_seed, in, out, report, classes);
    if (*grad) return cmd_gradcheck(plain_seed);
    if (*gen) return cmd_generate(config, sets, n, first, out);
  } catch (const NonFinite& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ConfigMismatch& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const RankTooLarge& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const BadSpec& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
