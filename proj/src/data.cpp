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

#include "fewshot/data.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fewshot/rng.hpp"

namespace fewshot {

std::vector<Index> Instance::label_indices() const {
  std::vector<Index> out;
  for (Index k = 0; k < Index(labels.size()); ++k)
    if (labels[k]) out.push_back(k);
  return out;
}

void SyntheticTaskSpec::validate() const {
  if (classes < 1 || input_dim < 1 || tokens < 1) throw BadSpec("sizes must be positive");
  if (!(label_density >= 1.0) || label_density > double(classes))
    throw BadSpec("label_density must lie in [1, classes]");
  if (!(noise_sigma >= 0.0)) throw BadSpec("noise_sigma must be non-negative");
  if (!std::isfinite(signature_scale)) throw BadSpec("signature_scale must be finite");
}

Eigen::MatrixXd class_signatures(const SyntheticTaskSpec& spec) {
  spec.validate();
  Rng rng(spec.seed, "signatures");
  Eigen::MatrixXd raw(spec.input_dim, spec.classes);
  for (Index c = 0; c < raw.cols(); ++c)
    for (Index r = 0; r < raw.rows(); ++r) raw(r, c) = rng.normal();
  if (spec.input_dim >= spec.classes) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
    const Eigen::MatrixXd q =
        qr.householderQ() * Eigen::MatrixXd::Identity(spec.input_dim, spec.classes);
    return q.transpose();
  }
  Eigen::MatrixXd rows = raw.transpose();
  rows.rowwise().normalize();
  return rows;
}

std::vector<Instance> gen_synthetic(const SyntheticTaskSpec& spec, Index n, Index first_index) {
  spec.validate();
  if (n < 1) throw BadSpec("instance count must be positive");
  const Eigen::MatrixXd sig = class_signatures(spec);
  const double p = spec.label_density / double(spec.classes);
  std::vector<Instance> out;
  out.reserve(n);
  for (Index i = first_index; i < first_index + n; ++i) {
    Rng rng(spec.seed, "instance", static_cast<std::uint64_t>(i));
    Instance inst;
    char id[32];
    std::snprintf(id, sizeof(id), "syn-%06lld", static_cast<long long>(i));
    inst.id = id;
    inst.labels.assign(spec.classes, 0);
    bool any = false;
    while (!any) {
      for (Index k = 0; k < spec.classes; ++k) {
        inst.labels[k] = rng.bernoulli(p) ? 1 : 0;
        any = any || inst.labels[k];
      }
    }
    Eigen::MatrixXd feat = Eigen::MatrixXd::Zero(spec.tokens, spec.input_dim);
    for (Index k = 0; k < spec.classes; ++k)
      if (inst.labels[k]) feat.row(rng.below(spec.tokens)) += spec.signature_scale * sig.row(k);
    if (spec.noise_sigma > 0.0)
      for (Index r = 0; r < feat.rows(); ++r)
        for (Index c = 0; c < feat.cols(); ++c) feat(r, c) += rng.normal(0.0, spec.noise_sigma);
    inst.features = Tensor<float>({spec.tokens, spec.input_dim});
    inst.features.matrix() = feat.cast<float>();
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<Instance> SupportSet::gather(const std::vector<Instance>& corpus) const {
  std::vector<Instance> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(corpus.at(i));
  return out;
}

SupportSet kshot_sample(const std::vector<Instance>& corpus, const SamplerConfig& cfg) {
  if (cfg.k_shot < 1) throw BadSpec("k_shot must be at least 1");
  const Index classes = infer_classes(corpus);
  SupportSet s;
  s.counts.assign(classes, 0);
  s.available.assign(classes, 0);
  for (const Instance& inst : corpus) {
    if (Index(inst.labels.size()) != classes)
      throw SchemaError("instance " + inst.id + " has a different label width");
    for (Index k = 0; k < classes; ++k) s.available[k] += inst.labels[k] ? 1 : 0;
  }

  std::vector<Index> order(classes);
  std::iota(order.begin(), order.end(), Index{0});
  Rng(cfg.seed, "sampler:order").shuffle(order);

  std::vector<bool> used(corpus.size(), false);
  for (Index c : order) {
    if (s.available[c] == 0) {
      s.empty_classes.push_back(c);
      continue;
    }
    if (s.counts[c] >= cfg.k_shot) continue;
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < corpus.size(); ++i)
      if (!used[i] && corpus[i].labels[c]) candidates.push_back(i);
    Rng(cfg.seed, "sampler:class", static_cast<std::uint64_t>(c)).shuffle(candidates);
    for (std::size_t i : candidates) {
      if (s.counts[c] >= cfg.k_shot) break;
      used[i] = true;
      s.indices.push_back(i);
      for (Index k = 0; k < classes; ++k) s.counts[k] += corpus[i].labels[k] ? 1 : 0;
    }
  }
  for (Index c = 0; c < classes; ++c) {
    if (s.available[c] > 0 && s.counts[c] < cfg.k_shot)
      s.warnings.push_back("class " + std::to_string(c) + ": only " +
                           std::to_string(s.counts[c]) + " of " + std::to_string(cfg.k_shot) +
                           " examples available");
  }
  return s;
}

void write_counts_csv(const SupportSet& support, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "class_id,available,selected\n";
  for (std::size_t c = 0; c < support.counts.size(); ++c)
    os << c << ',' << support.available[c] << ',' << support.counts[c] << '\n';
}

namespace {

void append_float(std::string& out, float v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

}  // namespace

std::string to_jsonl_line(const Instance& inst) {
  std::string line = "{\"id\":";
  line += nlohmann::json(inst.id).dump();
  line += ",\"labels\":[";
  bool first = true;
  for (Index k : inst.label_indices()) {
    if (!first) line += ',';
    line += std::to_string(k);
    first = false;
  }
  line += "],\"features\":[";
  const Index t = inst.features.size(0);
  const Index d = inst.features.size(1);
  for (Index r = 0; r < t; ++r) {
    line += r ? ",[" : "[";
    for (Index c = 0; c < d; ++c) {
      if (c) line += ',';
      append_float(line, inst.features[r * d + c]);
    }
    line += ']';
  }
  line += "]}";
  return line;
}

void export_jsonl(const std::vector<Instance>& instances, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (const Instance& inst : instances) os << to_jsonl_line(inst) << '\n';
}

std::vector<Instance> import_jsonl(const std::filesystem::path& path, Index classes) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open " + path.string(), 0);
  struct Raw {
    std::string id;
    std::vector<Index> labels;
    Tensor<float> features;
  };
  std::vector<Raw> rows;
  std::string line;
  long lineno = 0;
  Index max_label = -1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(e.what(), lineno);
    }
    const auto schema = [&](const std::string& m) {
      throw SchemaError("line " + std::to_string(lineno) + ": " + m);
    };
    if (!j.is_object()) schema("expected an object");
    if (!j.contains("id") || !j["id"].is_string()) schema("\"id\" must be a string");
    if (!j.contains("labels") || !j["labels"].is_array()) schema("\"labels\" must be an array");
    if (!j.contains("features") || !j["features"].is_array())
      schema("\"features\" must be an array");
    Raw raw;
    raw.id = j["id"].get<std::string>();
    for (const auto& l : j["labels"]) {
      if (!l.is_number_integer() || l.get<long long>() < 0)
        schema("labels must be non-negative integers");
      raw.labels.push_back(static_cast<Index>(l.get<long long>()));
      max_label = std::max(max_label, raw.labels.back());
    }
    if (raw.labels.empty()) schema("at least one label is required");
    const auto& feats = j["features"];
    if (feats.empty()) schema("features must be non-empty");
    const Index t = static_cast<Index>(feats.size());
    Index d = -1;
    std::vector<float> values;
    for (const auto& row : feats) {
      if (!row.is_array() || row.empty()) schema("features must be a 2-d array");
      if (d < 0) d = static_cast<Index>(row.size());
      if (static_cast<Index>(row.size()) != d) schema("ragged feature rows");
      for (const auto& v : row) {
        if (!v.is_number()) schema("features must be numbers");
        const auto f = static_cast<float>(v.get<double>());
        if (!std::isfinite(f)) schema("non-finite feature value");
        values.push_back(f);
      }
    }
    raw.features = Tensor<float>({t, d}, std::move(values));
    rows.push_back(std::move(raw));
  }
  if (classes == 0) classes = max_label + 1;
  std::vector<Instance> out;
  out.reserve(rows.size());
  for (Raw& raw : rows) {
    Instance inst;
    inst.id = std::move(raw.id);
    inst.labels.assign(classes, 0);
    for (Index l : raw.labels) {
      if (l >= classes)
        throw SchemaError("label " + std::to_string(l) + " of " + inst.id + " exceeds " +
                          std::to_string(classes) + " classes");
      inst.labels[l] = 1;
    }
    inst.features = std::move(raw.features);
    out.push_back(std::move(inst));
  }
  return out;
}

Index infer_classes(const std::vector<Instance>& instances) {
  Index k = 0;
  for (const Instance& inst : instances) k = std::max(k, Index(inst.labels.size()));
  return k;
}

}  // namespace fewshot
