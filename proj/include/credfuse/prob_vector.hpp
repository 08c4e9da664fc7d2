#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace credfuse {

/// A point on the K-class probability simplex.
class ProbVector {
 public:
  static constexpr double kTolerance = 1e-7;

  ProbVector() = default;
  /// Throws ParameterError unless the values lie on the simplex within kTolerance.
  explicit ProbVector(std::vector<double> values);
  ProbVector(std::initializer_list<double> values) : ProbVector(std::vector<double>(values)) {}

  static ProbVector uniform(std::size_t k);
  static ProbVector one_hot(std::size_t k, std::size_t index);
  /// Skips validation. For values that are on the simplex by construction.
  static ProbVector unchecked(std::vector<double> values);

  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const noexcept { return values_; }
  const std::vector<double>& vector() const noexcept { return values_; }

  friend bool operator==(const ProbVector&, const ProbVector&) = default;

 private:
  std::vector<double> values_;
};

}  // namespace credfuse
