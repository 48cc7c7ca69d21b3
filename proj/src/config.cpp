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

#include "fewshot/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace fewshot {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::lora_only: return "lora_only";
    case Variant::no_group_weights: return "no_group_weights";
    case Variant::distill_only: return "distill_only";
    case Variant::ent_only: return "ent_only";
    case Variant::bce_aug_only: return "bce_aug_only";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::full, Variant::lora_only, Variant::no_group_weights,
                    Variant::distill_only, Variant::ent_only, Variant::bce_aug_only})
    if (name == variant_name(v)) return v;
  throw ConfigError("unknown variant '" + name + "'");
}

std::string VariantSpec::label() const {
  std::string s = variant_name(variant);
  if (n_aug) s += ":" + std::to_string(*n_aug);
  return s;
}

VariantSpec parse_variant_spec(const std::string& text) {
  VariantSpec spec;
  const auto colon = text.find(':');
  spec.variant = parse_variant(text.substr(0, colon));
  if (colon != std::string::npos) {
    const std::string n = text.substr(colon + 1);
    Index value = 0;
    auto res = std::from_chars(n.data(), n.data() + n.size(), value);
    if (res.ec != std::errc() || res.ptr != n.data() + n.size() || value < 1)
      throw ConfigError("bad augmentation count in variant '" + text + "'");
    spec.n_aug = value;
  }
  return spec;
}

ResolvedObjective resolve_objective(const TrainConfig& cfg) {
  ResolvedObjective r;
  r.weights = cfg.loss;
  r.options.differentiate_weights = cfg.differentiate_weights;
  LossWeights& w = r.weights;
  switch (cfg.run.variant) {
    case Variant::full: break;
    case Variant::lora_only:
      r.use_film = false;
      w.lambda_distill = w.lambda_aug = w.lambda_ent = 0.0;
      break;
    case Variant::no_group_weights: r.options.group_weighting = false; break;
    case Variant::distill_only: w.lambda_aug = w.lambda_ent = 0.0; break;
    case Variant::ent_only: w.lambda_distill = w.lambda_aug = 0.0; break;
    case Variant::bce_aug_only: w.lambda_distill = w.lambda_ent = 0.0; break;
  }
  return r;
}

void TrainConfig::validate() const {
  try {
    model.validate();
    loss.validate();
    data.task.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (data.task.classes != model.classes)
    throw ConfigError("data.classes must equal model.classes");
  if (data.task.input_dim != model.input_dim)
    throw ConfigError("data.input_dim must equal model.input_dim");
  if (data.task.tokens != model.tokens) throw ConfigError("data.tokens must equal model.tokens");
  if (augment.n < 1 || augment.d_e < 1 || augment.hidden < 1)
    throw ConfigError("augment sizes must be positive");
  if (run.steps < 1) throw ConfigError("run.steps must be at least 1");
  if (run.batch_size < 1) throw ConfigError("run.batch_size must be at least 1");
  if (run.eval_every < 1) throw ConfigError("run.eval_every must be at least 1");
  if (data.k_shot < 1) throw ConfigError("data.k_shot must be at least 1");
  if (data.pool < 1 || data.val_size < 1) throw ConfigError("data sizes must be positive");
  if (!(optim.lr > 0) || optim.weight_decay < 0 || !(optim.eps > 0) || optim.beta1 < 0 ||
      optim.beta1 >= 1 || optim.beta2 < 0 || optim.beta2 >= 1)
    throw ConfigError("invalid optimizer settings");
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc() || res.ptr != last)
    throw ConfigError("bad value for " + key + ": '" + text + "'");
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError("bad boolean for " + key + ": '" + text + "'");
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + '"';
}

struct Field {
  const char* section;
  const char* key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

template <typename T>
Field int_field(const char* section, const char* key, T TrainConfig::*outer, Index T::*member) {
  const std::string name = std::string(section) + "." + key;
  return {section, key, [=](const TrainConfig& c) { return std::to_string((c.*outer).*member); },
          [=](TrainConfig& c, const std::string& v) {
            (c.*outer).*member = parse_number<Index>(name, v);
          }};
}

template <typename T>
Field real_field(const char* section, const char* key, T TrainConfig::*outer, double T::*member) {
  const std::string name = std::string(section) + "." + key;
  return {section, key, [=](const TrainConfig& c) { return format_double((c.*outer).*member); },
          [=](TrainConfig& c, const std::string& v) {
            (c.*outer).*member = parse_number<double>(name, v);
          }};
}

template <typename T>
Field seed_field(const char* section, const char* key, T TrainConfig::*outer,
                 std::uint64_t T::*member) {
  const std::string name = std::string(section) + "." + key;
  return {section, key, [=](const TrainConfig& c) { return std::to_string((c.*outer).*member); },
          [=](TrainConfig& c, const std::string& v) {
            (c.*outer).*member = parse_number<std::uint64_t>(name, v);
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    using TC = TrainConfig;
    f.push_back(int_field("model", "layers", &TC::model, &EncoderConfig::layers));
    f.push_back(int_field("model", "width", &TC::model, &EncoderConfig::width));
    f.push_back(int_field("model", "heads", &TC::model, &EncoderConfig::heads));
    f.push_back(int_field("model", "tokens", &TC::model, &EncoderConfig::tokens));
    f.push_back(int_field("model", "l_aug", &TC::model, &EncoderConfig::l_aug));
    f.push_back(int_field("model", "l_lora", &TC::model, &EncoderConfig::l_lora));
    f.push_back(int_field("model", "rank", &TC::model, &EncoderConfig::rank));
    f.push_back(int_field("model", "classes", &TC::model, &EncoderConfig::classes));
    f.push_back(int_field("model", "input_dim", &TC::model, &EncoderConfig::input_dim));
    f.push_back(real_field("model", "lora_scale", &TC::model, &EncoderConfig::lora_scale));
    f.push_back({"model", "head",
                 [](const TC& c) {
                   return quote(c.model.head == HeadMode::trainable_linear ? "trainable_linear"
                                                                           : "frozen_prototype");
                 },
                 [](TC& c, const std::string& v) {
                   if (v == "frozen_prototype")
                     c.model.head = HeadMode::frozen_prototype;
                   else if (v == "trainable_linear")
                     c.model.head = HeadMode::trainable_linear;
                   else
                     throw ConfigError("model.head must be frozen_prototype or trainable_linear");
                 }});
    f.push_back({"model", "backbone_seed",
                 [](const TC& c) { return std::to_string(c.backbone_seed); },
                 [](TC& c, const std::string& v) {
                   c.backbone_seed = parse_number<std::uint64_t>("model.backbone_seed", v);
                 }});

    f.push_back(int_field("augment", "n", &TC::augment, &FilmConfig::n));
    f.push_back(int_field("augment", "d_e", &TC::augment, &FilmConfig::d_e));
    f.push_back(int_field("augment", "hidden", &TC::augment, &FilmConfig::hidden));

    f.push_back(real_field("loss", "lambda_distill", &TC::loss, &LossWeights::lambda_distill));
    f.push_back(real_field("loss", "lambda_aug", &TC::loss, &LossWeights::lambda_aug));
    f.push_back(real_field("loss", "lambda_ent", &TC::loss, &LossWeights::lambda_ent));
    f.push_back(real_field("loss", "s", &TC::loss, &LossWeights::s));
    f.push_back(real_field("loss", "eps", &TC::loss, &LossWeights::eps));
    f.push_back({"loss", "differentiate_weights",
                 [](const TC& c) { return std::string(c.differentiate_weights ? "true" : "false"); },
                 [](TC& c, const std::string& v) {
                   c.differentiate_weights = parse_bool("loss.differentiate_weights", v);
                 }});

    f.push_back(real_field("optim", "lr", &TC::optim, &AdamWConfig::lr));
    f.push_back(real_field("optim", "weight_decay", &TC::optim, &AdamWConfig::weight_decay));
    f.push_back(real_field("optim", "beta1", &TC::optim, &AdamWConfig::beta1));
    f.push_back(real_field("optim", "beta2", &TC::optim, &AdamWConfig::beta2));
    f.push_back(real_field("optim", "eps", &TC::optim, &AdamWConfig::eps));
    f.push_back({"optim", "algorithm", [](const TC&) { return quote("adamw"); },
                 [](TC&, const std::string& v) {
                   if (v != "adamw") throw ConfigError("optim.algorithm must be adamw");
                 }});

    f.push_back(int_field("run", "steps", &TC::run, &RunConfig::steps));
    f.push_back(int_field("run", "batch_size", &TC::run, &RunConfig::batch_size));
    f.push_back(seed_field("run", "seed", &TC::run, &RunConfig::seed));
    f.push_back(int_field("run", "eval_every", &TC::run, &RunConfig::eval_every));
    f.push_back({"run", "variant", [](const TC& c) { return quote(variant_name(c.run.variant)); },
                 [](TC& c, const std::string& v) { c.run.variant = parse_variant(v); }});

    f.push_back({"data", "train", [](const TC& c) { return quote(c.data.train_path); },
                 [](TC& c, const std::string& v) { c.data.train_path = v; }});
    f.push_back({"data", "val", [](const TC& c) { return quote(c.data.val_path); },
                 [](TC& c, const std::string& v) { c.data.val_path = v; }});
    f.push_back(int_field("data", "pool", &TC::data, &DataConfig::pool));
    f.push_back(int_field("data", "val_size", &TC::data, &DataConfig::val_size));
    f.push_back(int_field("data", "k_shot", &TC::data, &DataConfig::k_shot));
    f.push_back({"data", "seed", [](const TC& c) { return std::to_string(c.data.task.seed); },
                 [](TC& c, const std::string& v) {
                   c.data.task.seed = parse_number<std::uint64_t>("data.seed", v);
                 }});
    f.push_back({"data", "signature_scale",
                 [](const TC& c) { return format_double(c.data.task.signature_scale); },
                 [](TC& c, const std::string& v) {
                   c.data.task.signature_scale = parse_number<double>("data.signature_scale", v);
                 }});
    f.push_back({"data", "noise_sigma",
                 [](const TC& c) { return format_double(c.data.task.noise_sigma); },
                 [](TC& c, const std::string& v) {
                   c.data.task.noise_sigma = parse_number<double>("data.noise_sigma", v);
                 }});
    f.push_back({"data", "label_density",
                 [](const TC& c) { return format_double(c.data.task.label_density); },
                 [](TC& c, const std::string& v) {
                   c.data.task.label_density = parse_number<double>("data.label_density", v);
                 }});
    return f;
  }();
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& v, long line) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') {
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
      if (v[i] == '\\' && i + 2 < v.size()) ++i;
      out += v[i];
    }
    return out;
  }
  if (!v.empty() && v.front() == '"')
    throw ConfigError("line " + std::to_string(line) + ": unterminated string");
  return v;
}

// Strips a trailing comment that is not inside a string.
std::string strip_comment(const std::string& s) {
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_string = !in_string;
    if (s[i] == '#' && !in_string) return s.substr(0, i);
  }
  return s;
}

}  // namespace

void sync_data_shape(TrainConfig& cfg) {
  cfg.data.task.classes = cfg.model.classes;
  cfg.data.task.input_dim = cfg.model.input_dim;
  cfg.data.task.tokens = cfg.model.tokens;
  cfg.augment.channels = cfg.model.width;
}

void set_config_value(TrainConfig& cfg, const std::string& section, const std::string& key,
                      const std::string& value) {
  for (const Field& f : fields()) {
    if (section == f.section && key == f.key) {
      f.set(cfg, value);
      sync_data_shape(cfg);
      return;
    }
  }
  throw ConfigError("unknown key " + section + "." + key);
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError("override must look like section.key=value, got '" + assignment + "'");
  set_config_value(cfg, trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
                   unquote(trim(assignment.substr(eq + 1)), 0));
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  sync_data_shape(cfg);
  std::istringstream is(text);
  std::string raw;
  std::string section;
  long line = 0;
  while (std::getline(is, raw)) {
    ++line;
    const std::string s = trim(strip_comment(raw));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError("line " + std::to_string(line) + ": bad section");
      section = trim(s.substr(1, s.size() - 2));
      const bool known = std::any_of(fields().begin(), fields().end(),
                                     [&](const Field& f) { return section == f.section; });
      if (!known)
        throw ConfigError("line " + std::to_string(line) + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line) + ": expected key = value");
    if (section.empty())
      throw ConfigError("line " + std::to_string(line) + ": key outside of a section");
    try {
      set_config_value(cfg, section, trim(s.substr(0, eq)), unquote(trim(s.substr(eq + 1)), line));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string to_config_text(const TrainConfig& cfg) {
  std::string out;
  std::string section;
  for (const Field& f : fields()) {
    if (section != f.section) {
      if (!section.empty()) out += '\n';
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

}  // namespace fewshot
