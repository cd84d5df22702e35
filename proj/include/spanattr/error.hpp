// Copyright 2026 The spanattr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace spanattr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file did not match its documented schema. `field()` names the
/// offending JSON path.
class SchemaError : public Error {
 public:
  SchemaError(std::string field, const std::string& what)
      : Error("schema error at '" + field + "': " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Parsed data violates a type invariant (boundary overlap, cycle, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A matrix disagrees with the instance it accompanies.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument to an operation (empty span, out-of-range index).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Zero-norm vector where a cosine is required.
class ZeroNormError : public Error {
 public:
  using Error::Error;
};

}  // namespace spanattr
