#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace ovadet {

inline constexpr int kNumClasses = 11;

/// One of the 11 parasitic-egg species. Ids follow the dataset's canonical listing order.
class CategoryId {
 public:
  constexpr CategoryId() = default;
  /// Throws ContractError outside [0, 10].
  explicit CategoryId(int id);

  constexpr int value() const noexcept { return id_; }
  std::string_view name() const noexcept;

  friend constexpr bool operator==(CategoryId, CategoryId) = default;
  friend constexpr auto operator<=>(CategoryId, CategoryId) = default;

 private:
  int id_ = 0;
};

/// Canonical species names, indexed by CategoryId::value().
const std::array<std::string_view, kNumClasses>& category_names();

/// Case- and punctuation-insensitive lookup; also accepts abbreviated genus forms ("A. lumbricoides").
std::optional<CategoryId> category_from_name(std::string_view name);

}  // namespace ovadet
