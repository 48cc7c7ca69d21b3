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

#include "fewshot/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace fewshot {

namespace {

constexpr int kFormatVersion = 1;
constexpr const char* kManifest = "manifest.json";
constexpr const char* kBlob = "tensors.bin";

std::size_t dtype_width(DType t) { return t == DType::f32 ? 4 : 8; }

}  // namespace

namespace detail {

void to_little_endian(unsigned char* bytes, std::size_t count, std::size_t width) {
  if constexpr (std::endian::native == std::endian::little) {
    (void)bytes;
    (void)count;
    (void)width;
  } else {
    for (std::size_t i = 0; i < count; ++i) std::reverse(bytes + i * width, bytes + (i + 1) * width);
  }
}

}  // namespace detail

const TensorRecord* Checkpoint::find(const std::string& name) const {
  for (const TensorRecord& r : tensors)
    if (r.name == name) return &r;
  return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const TensorRecord& r : ckpt.tensors) {
    table.push_back({{"name", r.name},
                     {"dtype", dtype_name(r.dtype)},
                     {"shape", r.shape},
                     {"offset", offset},
                     {"bytes", r.bytes.size()}});
    offset += r.bytes.size();
  }
  nlohmann::json m;
  m["format"] = kFormatVersion;
  m["step"] = ckpt.step;
  m["rng"] = {{"seed", ckpt.rng_seed}, {"counter", ckpt.rng_counter}};
  m["metrics"] = ckpt.metrics;
  m["counters"] = ckpt.counters;
  m["config"] = ckpt.config_text;
  m["tensors"] = std::move(table);

  std::ofstream blob(dir / kBlob, std::ios::binary | std::ios::trunc);
  for (const TensorRecord& r : ckpt.tensors)
    blob.write(reinterpret_cast<const char*>(r.bytes.data()),
               static_cast<std::streamsize>(r.bytes.size()));
  if (!blob) throw CheckpointError("cannot write " + (dir / kBlob).string());
  std::ofstream man(dir / kManifest, std::ios::binary | std::ios::trunc);
  man << m.dump(2) << '\n';
  if (!man) throw CheckpointError("cannot write " + (dir / kManifest).string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream man(dir / kManifest, std::ios::binary);
  if (!man) throw CheckpointError("no manifest in " + dir.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(man);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad manifest: ") + e.what());
  }
  std::ifstream blob_in(dir / kBlob, std::ios::binary);
  if (!blob_in) throw CheckpointError("no tensor blob in " + dir.string());
  const std::vector<unsigned char> blob((std::istreambuf_iterator<char>(blob_in)),
                                        std::istreambuf_iterator<char>());
  Checkpoint ckpt;
  try {
    if (m.at("format").get<int>() != kFormatVersion)
      throw CheckpointError("unsupported checkpoint format");
    ckpt.step = m.at("step").get<long long>();
    ckpt.rng_seed = m.at("rng").at("seed").get<std::uint64_t>();
    ckpt.rng_counter = m.at("rng").at("counter").get<std::uint64_t>();
    ckpt.metrics = m.at("metrics").get<std::map<std::string, double>>();
    ckpt.counters = m.at("counters").get<std::map<std::string, long long>>();
    ckpt.config_text = m.at("config").get<std::string>();
    std::uint64_t expected_offset = 0;
    for (const auto& e : m.at("tensors")) {
      TensorRecord r;
      r.name = e.at("name").get<std::string>();
      const std::string dt = e.at("dtype").get<std::string>();
      if (dt != "f32" && dt != "f64") throw CheckpointError(r.name + ": unknown dtype " + dt);
      r.dtype = dt == "f32" ? DType::f32 : DType::f64;
      r.shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      const auto bytes = e.at("bytes").get<std::uint64_t>();
      if (offset != expected_offset || offset + bytes > blob.size())
        throw CheckpointError(r.name + ": byte range outside the blob");
      if (bytes != std::uint64_t(shape_numel(r.shape)) * dtype_width(r.dtype))
        throw CheckpointError(r.name + ": byte count does not match shape");
      r.bytes.assign(blob.begin() + offset, blob.begin() + offset + bytes);
      expected_offset += bytes;
      ckpt.tensors.push_back(std::move(r));
    }
    if (expected_offset != blob.size()) throw CheckpointError("trailing bytes in tensor blob");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad manifest: ") + e.what());
  }
  return ckpt;
}

}  // namespace fewshot
