// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <stdexcept>
#include <string>

namespace dmx {

/// Base of every error raised by the library. The CLI maps the kind to an exit code.
class Error : public std::runtime_error {
 public:
  enum class Kind { Format, Unsupported, Io, Dataset, Consistency, Shape, Contract, Numeric };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& w) : Error(Kind::Format, w) {}
};

class UnsupportedError : public Error {
 public:
  explicit UnsupportedError(const std::string& w) : Error(Kind::Unsupported, w) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& w) : Error(Kind::Io, w) {}
};

class DatasetError : public Error {
 public:
  explicit DatasetError(const std::string& w) : Error(Kind::Dataset, w) {}
};

class ConsistencyError : public Error {
 public:
  ConsistencyError(const std::string& w, double max_deviation)
      : Error(Kind::Consistency, w), max_deviation_(max_deviation) {}
  double max_deviation() const noexcept { return max_deviation_; }

 private:
  double max_deviation_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& w) : Error(Kind::Shape, w) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& w) : Error(Kind::Contract, w) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& w) : Error(Kind::Numeric, w) {}
};

}  // namespace dmx
