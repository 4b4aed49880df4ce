#pragma once

#include <array>
#include <span>

#include "ovadet/categories.hpp"

namespace ovadet {

inline constexpr double kSimplexTolerance = 1e-6;

/// An 11-way probability vector. Construction through `checked` guarantees every component lies
/// in [0,1] and the components sum to 1 within kSimplexTolerance.
class ClassScores {
 public:
  using Values = std::array<double, kNumClasses>;

  ClassScores() = default;

  /// Throws ContractError if `values` is not on the simplex.
  static ClassScores checked(const Values& values);
  static ClassScores checked(std::span<const double> values);
  static ClassScores one_hot(CategoryId id);
  static ClassScores uniform();

  static bool is_simplex(std::span<const double> values, double tol = kSimplexTolerance) noexcept;

  const Values& values() const noexcept { return values_; }
  double operator[](int i) const noexcept { return values_[static_cast<std::size_t>(i)]; }

  /// Lowest index among the maxima.
  CategoryId argmax() const noexcept;
  double max() const noexcept;

  friend bool operator==(const ClassScores&, const ClassScores&) = default;

 private:
  explicit ClassScores(const Values& v) : values_(v) {}
  Values values_{};
};

/// Numerically stable softmax over logits, computed in double.
ClassScores softmax(std::span<const double> logits);

}  // namespace ovadet
