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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "fewshot/data.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "fewshot_data_test";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Instance labeled(const std::string& id, std::vector<std::uint8_t> labels) {
  Instance inst;
  inst.id = id;
  inst.labels = std::move(labels);
  inst.features = Tensor<float>({1, 2});
  return inst;
}

TEST(SyntheticTest, Deterministic) {
  SyntheticTaskSpec spec;
  spec.seed = 3;
  const auto a = gen_synthetic(spec, 20);
  const auto b = gen_synthetic(spec, 20);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(to_jsonl_line(a[i]), to_jsonl_line(b[i]));
  spec.seed = 4;
  EXPECT_NE(to_jsonl_line(gen_synthetic(spec, 1)[0]), to_jsonl_line(a[0]));
}

TEST(SyntheticTest, RangesAreConsistent) {
  SyntheticTaskSpec spec;
  const auto all = gen_synthetic(spec, 10);
  const auto tail = gen_synthetic(spec, 4, 6);
  for (std::size_t i = 0; i < tail.size(); ++i)
    EXPECT_EQ(to_jsonl_line(tail[i]), to_jsonl_line(all[6 + i]));
}

TEST(SyntheticTest, NoiselessSingleSignature) {
  SyntheticTaskSpec spec;
  spec.noise_sigma = 0.0;
  spec.label_density = 1.0;
  spec.classes = 4;
  spec.input_dim = 6;
  spec.tokens = 5;
  const Eigen::MatrixXd sig = class_signatures(spec);
  EXPECT_LT((sig * sig.transpose() - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-12);
  for (const Instance& inst : gen_synthetic(spec, 200)) {
    const auto labels = inst.label_indices();
    ASSERT_FALSE(labels.empty());
    const Eigen::MatrixXd f = inst.features.matrix().cast<double>();
    Index nonzero = 0;
    for (Index r = 0; r < f.rows(); ++r) nonzero += f.row(r).norm() > 0 ? 1 : 0;
    EXPECT_LE(nonzero, Index(labels.size()));
    if (labels.size() == 1) {
      EXPECT_EQ(nonzero, 1);
      EXPECT_NEAR(f.colwise().sum().dot(sig.row(labels[0])), spec.signature_scale, 1e-5);
    }
  }
}

// Labels are Bernoulli(density / K) per class, resampled while empty, so the
// mean count is K p / (1 - (1 - p)^K).
TEST(SyntheticTest, LabelCountMatchesConditionedBinomial) {
  SyntheticTaskSpec spec;
  spec.tokens = 1;
  spec.input_dim = 8;
  spec.seed = 12;
  const auto data = gen_synthetic(spec, 10000);
  double sum = 0, sq = 0;
  for (const Instance& inst : data) {
    const double n = double(inst.label_indices().size());
    sum += n;
    sq += n * n;
  }
  const double n = double(data.size());
  const double mean = sum / n;
  const double se = std::sqrt((sq / n - mean * mean) / n);
  EXPECT_LT(std::abs(mean - 1.85168522034), 3 * se) << "mean " << mean << " se " << se;
}

TEST(SyntheticTest, NearestSignatureRecoversTheLabel) {
  SyntheticTaskSpec spec;
  spec.label_density = 1.0;
  spec.classes = 5;
  spec.noise_sigma = 0.1;
  spec.seed = 2;
  const Eigen::MatrixXd sig = class_signatures(spec);
  Index single = 0;
  for (const Instance& inst : gen_synthetic(spec, 300)) {
    const auto labels = inst.label_indices();
    if (labels.size() != 1) continue;
    ++single;
    const Eigen::VectorXd scores = sig * inst.features.matrix().cast<double>().colwise().sum().transpose();
    Index best = 0;
    scores.maxCoeff(&best);
    EXPECT_EQ(best, labels[0]) << inst.id;
  }
  EXPECT_GT(single, 100);
}

TEST(SyntheticTest, InvalidSpec) {
  SyntheticTaskSpec spec;
  spec.label_density = 0.5;
  EXPECT_THROW(gen_synthetic(spec, 1), BadSpec);
  spec = SyntheticTaskSpec{};
  spec.noise_sigma = -1;
  EXPECT_THROW(gen_synthetic(spec, 1), BadSpec);
  EXPECT_THROW(gen_synthetic(SyntheticTaskSpec{}, 0), BadSpec);
}

TEST(SamplerTest, DisjointSingleLabel) {
  std::vector<Instance> corpus;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 20; ++i) {
      std::vector<std::uint8_t> l(3, 0);
      l[c] = 1;
      corpus.push_back(labeled("x" + std::to_string(c * 20 + i), l));
    }
  const auto s = kshot_sample(corpus, SamplerConfig{2, 5});
  EXPECT_EQ(s.indices.size(), 6u);
  EXPECT_EQ(s.counts, (std::vector<Index>{2, 2, 2}));
  EXPECT_TRUE(s.warnings.empty());
}

TEST(SamplerTest, PerfectCooccurrence) {
  std::vector<Instance> corpus;
  for (int i = 0; i < 10; ++i) corpus.push_back(labeled("p" + std::to_string(i), {1, 1}));
  const auto s = kshot_sample(corpus, SamplerConfig{3, 0});
  EXPECT_EQ(s.indices.size(), 3u);
  EXPECT_EQ(s.counts, (std::vector<Index>{3, 3}));
}

TEST(SamplerTest, ScarceClassWarns) {
  std::vector<Instance> corpus;
  for (int i = 0; i < 30; ++i) corpus.push_back(labeled("a" + std::to_string(i), {1, 0, 0}));
  corpus.push_back(labeled("rare", {0, 1, 0}));
  const auto s = kshot_sample(corpus, SamplerConfig{15, 1});
  EXPECT_EQ(s.counts[0], 15);
  EXPECT_EQ(s.counts[1], 1);
  ASSERT_EQ(s.warnings.size(), 1u);
  EXPECT_NE(s.warnings[0].find("class 1"), std::string::npos);
  EXPECT_EQ(s.empty_classes, (std::vector<Index>{2}));
}

TEST(SamplerTest, RandomizedCoverage) {
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    Rng rng(trial, "corpus");
    const Index k = 2 + rng.below(7);
    const Index n = 5 + rng.below(80);
    std::vector<Instance> corpus;
    for (Index i = 0; i < n; ++i) {
      std::vector<std::uint8_t> l(k, 0);
      l[rng.below(k)] = 1;
      for (Index c = 0; c < k; ++c)
        if (rng.bernoulli(0.25)) l[c] = 1;
      corpus.push_back(labeled("r" + std::to_string(i), l));
    }
    const SamplerConfig cfg{1 + rng.below(15), trial};
    const auto s = kshot_sample(corpus, cfg);
    for (Index c = 0; c < k; ++c)
      EXPECT_GE(s.counts[c], std::min(cfg.k_shot, s.available[c])) << "trial " << trial;
    std::vector<std::size_t> sorted = s.indices;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(std::unique(sorted.begin(), sorted.end()), sorted.end());
    const auto again = kshot_sample(corpus, cfg);
    EXPECT_EQ(again.indices, s.indices);
  }
}

TEST(SamplerTest, CountsCsv) {
  std::vector<Instance> corpus = {labeled("a", {1, 0}), labeled("b", {1, 1})};
  const auto s = kshot_sample(corpus, SamplerConfig{1, 0});
  const fs::path p = scratch("counts.csv");
  write_counts_csv(s, p);
  const std::string text = slurp(p);
  EXPECT_EQ(text.substr(0, text.find('\n')), "class_id,available,selected");
  EXPECT_NE(text.find("\n1,1,"), std::string::npos);
}

TEST(JsonlTest, HandwrittenFixture) {
  const auto data = import_jsonl(fs::path(FEWSHOT_TEST_DATA) / "two_instances.jsonl");
  ASSERT_EQ(data.size(), 2u);
  EXPECT_EQ(data[0].id, "clip-a");
  EXPECT_EQ(data[0].labels, (std::vector<std::uint8_t>{1, 0, 1}));
  EXPECT_EQ(data[1].labels, (std::vector<std::uint8_t>{0, 1, 0}));
  EXPECT_EQ(data[0].features, Tensor<float>({2, 3}, std::vector<float>{1, 0.5f, -2, 0, 0, 0.25f}));
  EXPECT_EQ(data[1].features, Tensor<float>({2, 3}, std::vector<float>{-1.5f, 3, 0, 2, -0.125f, 1}));
  Tensor<float> tokens, labels;
  make_batch(data, {1, 0}, tokens, labels);
  EXPECT_EQ(tokens.shape(), (Shape{2, 2, 3}));
  EXPECT_EQ(labels, Tensor<float>({2, 3}, std::vector<float>{0, 1, 0, 1, 0, 1}));
  EXPECT_EQ(import_jsonl(fs::path(FEWSHOT_TEST_DATA) / "two_instances.jsonl", 5)[0].labels.size(), 5u);
}

TEST(JsonlTest, RoundTripIsByteIdentical) {
  SyntheticTaskSpec spec;
  spec.tokens = 3;
  spec.input_dim = 4;
  const fs::path a = scratch("a.jsonl");
  const fs::path b = scratch("b.jsonl");
  export_jsonl(gen_synthetic(spec, 25), a);
  export_jsonl(import_jsonl(a, spec.classes), b);
  EXPECT_EQ(slurp(a), slurp(b));
}

TEST(JsonlTest, SchemaErrors) {
  const auto check = [](const std::string& line) {
    const fs::path p = scratch("bad.jsonl");
    std::ofstream(p) << line << '\n';
    return p;
  };
  EXPECT_THROW(import_jsonl(check(R"({"id":"x","labels":[],"features":[[1]]})")), SchemaError);
  EXPECT_THROW(import_jsonl(check(R"({"id":"x","labels":[0],"features":[[1],[1,2]]})")), SchemaError);
  EXPECT_THROW(import_jsonl(check(R"({"id":"x","labels":[-1],"features":[[1]]})")), SchemaError);
  EXPECT_THROW(import_jsonl(check(R"({"labels":[0],"features":[[1]]})")), SchemaError);
  EXPECT_THROW(import_jsonl(check(R"({"id":"x","labels":[3],"features":[[1]]})"), 2), SchemaError);
  EXPECT_THROW(import_jsonl(check("{not json")), ParseError);
  EXPECT_THROW(import_jsonl(scratch("missing.jsonl")), ParseError);
}

}  // namespace
}  // namespace fewshot
