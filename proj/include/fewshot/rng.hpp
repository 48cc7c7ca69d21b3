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

#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "fewshot/tensor.hpp"

namespace fewshot {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Key of the stream (seed, purpose, counter). Streams with different
// purposes or counters are independent of each other and of draw order.
inline std::uint64_t stream_key(std::uint64_t seed, std::string_view purpose,
                                std::uint64_t counter = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^ fnv1a(purpose)) ^ counter);
}

/// Random stream addressed by (seed, purpose, counter).
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view purpose, std::uint64_t counter = 0)
      : engine_(stream_key(seed, purpose, counter)) {}

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  bool bernoulli(double p) { return uniform() < p; }
  // Uniform integer in [0, n).
  Index below(Index n) { return std::uniform_int_distribution<Index>(0, n - 1)(engine_); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    // Fisher-Yates with our own index draws; std::shuffle's draw pattern is
    // implementation-defined.
    for (Index i = static_cast<Index>(v.size()) - 1; i > 0; --i) std::swap(v[i], v[below(i + 1)]);
  }

  template <typename Scalar>
  Tensor<Scalar> normal_tensor(Shape shape, double stddev = 1.0) {
    Tensor<Scalar> t(std::move(shape));
    for (Index i = 0; i < t.numel(); ++i) t[i] = static_cast<Scalar>(normal(0.0, stddev));
    return t;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace fewshot
