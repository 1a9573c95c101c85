// ctxlm/errors.h

// Copyright 2026  The ctxlm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef CTXLM_ERRORS_H_
#define CTXLM_ERRORS_H_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ctxlm {

/// Base class of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated an operation's precondition.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Tensor or vector extents do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An index (token id, turn index) is out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable input data. Carries the offending path when known.
class DataError : public Error {
 public:
  using Error::Error;
};

class EmptyCorpusError : public DataError {
 public:
  using DataError::DataError;
};

class UnknownDialogueActError : public DataError {
 public:
  explicit UnknownDialogueActError(std::string raw)
      : DataError("unknown dialogue act '" + raw + "'"), raw_(std::move(raw)) {}
  const std::string& raw() const { return raw_; }

 private:
  std::string raw_;
};

/// Zero-norm vector where a direction is required (cosine lookup).
class DegenerateVectorError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss during training.
class TrainingFailure : public Error {
 public:
  TrainingFailure(std::int64_t step, const std::string& what)
      : Error("training failed at step " + std::to_string(step) + ": " + what),
        step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

}  // namespace ctxlm

#endif  // CTXLM_ERRORS_H_
