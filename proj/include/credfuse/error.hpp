#pragma once

#include <stdexcept>
#include <string>

namespace credfuse {

/// Base of every error thrown by the library. The category maps onto the
/// CLI's exit codes.
class Error : public std::runtime_error {
 public:
  enum class Category { kContract = 3, kParameter = 4, kFormat = 5, kIo = 6, kNumeric = 7, kUsage = 8 };

  Error(Category category, const std::string& what) : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

/// Precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(Category::kContract, what) {}
};

/// Distribution or model parameters are out of their domain.
class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& what) : Error(Category::kParameter, what) {}
};

/// A file could not be parsed, or parsed into an invalid object.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(Category::kFormat, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(Category::kIo, what) {}
};

/// A computation produced a non-finite or degenerate value.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(Category::kNumeric, what) {}
};

/// An API was called out of order (e.g. backward without a forward cache).
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(Category::kUsage, what) {}
};

}  // namespace credfuse
