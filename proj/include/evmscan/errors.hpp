// evmscan: sequence-model vulnerability scanning for EVM bytecode
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace evmscan {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Hex text could not be decoded; `offset` is the digit index of the first
// offending character (after prefix/whitespace stripping).
struct MalformedHex : Error {
  MalformedHex(const std::string& what, size_t offset)
      : Error(what), offset(offset) {}
  size_t offset;
};

struct ShapeError : Error {
  using Error::Error;
};

struct InvalidCapacity : Error {
  using Error::Error;
};

struct UnknownId : Error {
  using Error::Error;
};

struct MalformedLabel : Error {
  using Error::Error;
};

// CSV row that could not be parsed; `line` is 1-based.
struct RowError : Error {
  RowError(const std::string& what, size_t line) : Error(what), line(line) {}
  size_t line;
};

struct EmptyContract : Error {
  using Error::Error;
};

struct EmptyWindow : Error {
  using Error::Error;
};

struct EmptyBatch : Error {
  using Error::Error;
};

struct EmptyDataset : Error {
  using Error::Error;
};

struct LabelMismatch : Error {
  using Error::Error;
};

struct DatasetDegenerate : Error {
  using Error::Error;
};

struct NetworkError : Error {
  using Error::Error;
};

struct RateLimited : Error {
  using Error::Error;
};

struct ApiFormatError : Error {
  using Error::Error;
};

struct CheckpointError : Error {
  using Error::Error;
};

}  // namespace evmscan
