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

#include <stdexcept>
#include <string>

namespace fewshot {

// Base of every error raised by the library. Subclasses exist so callers
// (and tests) can dispatch on the failure kind.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define FEWSHOT_DEFINE_ERROR(Name)             \
  class Name : public Error {                  \
   public:                                     \
    explicit Name(const std::string& what_arg) \
        : Error(#Name ": " + what_arg) {}      \
  }

// numerics
FEWSHOT_DEFINE_ERROR(ShapeMismatch);
FEWSHOT_DEFINE_ERROR(AxisOutOfRange);
FEWSHOT_DEFINE_ERROR(TargetOutOfRange);
FEWSHOT_DEFINE_ERROR(NotScalar);
FEWSHOT_DEFINE_ERROR(GraphConsumed);
FEWSHOT_DEFINE_ERROR(NonFinite);

// adapters / backbone / augment
FEWSHOT_DEFINE_ERROR(RankTooLarge);
FEWSHOT_DEFINE_ERROR(IndexOutOfRange);
FEWSHOT_DEFINE_ERROR(ConfigMismatch);
FEWSHOT_DEFINE_ERROR(DuplicateParameter);

// data
FEWSHOT_DEFINE_ERROR(BadSpec);
FEWSHOT_DEFINE_ERROR(SchemaError);

// eval
FEWSHOT_DEFINE_ERROR(NoPositives);
FEWSHOT_DEFINE_ERROR(AllClassesEmpty);

// harness
FEWSHOT_DEFINE_ERROR(ConfigError);
FEWSHOT_DEFINE_ERROR(CheckpointError);

#undef FEWSHOT_DEFINE_ERROR

class ParseError : public Error {
 public:
  ParseError(const std::string& what_arg, long line)
      : Error("ParseError: line " + std::to_string(line) + ": " + what_arg), line_(line) {}

  long line() const { return line_; }

 private:
  long line_;
};

}  // namespace fewshot
