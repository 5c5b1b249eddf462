#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lsm {

/// Base class for every failure raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller supplied something that violates an operation's precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content. Carries the offending field and byte offset.
class ParseError : public Error {
 public:
  ParseError(std::string field, std::size_t offset, const std::string& what)
      : Error(what), field_(std::move(field)), offset_(offset) {}

  const std::string& field() const noexcept { return field_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::string field_;
  std::size_t offset_;
};

}  // namespace lsm
