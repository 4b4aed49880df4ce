#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>
#include <utility>

#include "ovadet/box.hpp"
#include "ovadet/categories.hpp"
#include "ovadet/class_scores.hpp"
#include "ovadet/errors.hpp"

namespace ovadet {

namespace {

constexpr std::array<std::string_view, kNumClasses> kNames = {
    "Ascaris lumbricoides",  "Capillaria philippinensis", "Enterobius vermicularis",
    "Fasciolopsis buski",    "Hookworm egg",              "Hymenolepis diminuta",
    "Hymenolepis nana",      "Opisthorchis viverrine",    "Paragonimus spp",
    "Taenia spp egg",        "Trichuris trichiura",
};

// Alternate spellings seen in challenge releases and in the literature.
constexpr std::pair<std::string_view, int> kAliases[] = {
    {"alumbricoides", 0}, {"cphilippinensis", 1}, {"evermicularis", 2}, {"fbuski", 3},
    {"hookworm", 4},      {"hdiminuta", 5},       {"hnana", 6},         {"oviverrine", 7},
    {"oviverrini", 7},    {"opisthorchisviverrini", 7}, {"paragonimus", 8},     {"paragonimusspp", 8}, {"taenia", 9},
    {"taeniaspp", 9},     {"ttrichiura", 10},
};

std::string fold(std::string_view s) {
  std::string out;
  for (char c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) out.push_back(static_cast<char>(std::tolower(u)));
  }
  return out;
}

}  // namespace

CategoryId::CategoryId(int id) : id_(id) {
  if (id < 0 || id >= kNumClasses) {
    throw ContractError("category id out of range [0,10]: " + std::to_string(id));
  }
}

std::string_view CategoryId::name() const noexcept { return kNames[static_cast<std::size_t>(id_)]; }

const std::array<std::string_view, kNumClasses>& category_names() { return kNames; }

std::optional<CategoryId> category_from_name(std::string_view name) {
  const std::string key = fold(name);
  for (int i = 0; i < kNumClasses; ++i) {
    if (fold(kNames[static_cast<std::size_t>(i)]) == key) return CategoryId(i);
  }
  for (const auto& [alias, id] : kAliases) {
    if (alias == key) return CategoryId(id);
  }
  return std::nullopt;
}

std::optional<BoundingBox> clamp_to_image(const BoundingBox& box, double width, double height) {
  BoundingBox c{std::clamp(box.xmin, 0.0, width), std::clamp(box.ymin, 0.0, height),
                std::clamp(box.xmax, 0.0, width), std::clamp(box.ymax, 0.0, height)};
  if (!c.valid()) return std::nullopt;
  return c;
}

double iou(const BoundingBox& a, const BoundingBox& b) noexcept {
  const double iw = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
  const double ih = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

bool ClassScores::is_simplex(std::span<const double> values, double tol) noexcept {
  if (values.size() != static_cast<std::size_t>(kNumClasses)) return false;
  double sum = 0.0;
  for (double v : values) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) return false;
    sum += v;
  }
  return std::abs(sum - 1.0) <= tol;
}

ClassScores ClassScores::checked(const Values& values) {
  if (!is_simplex(values)) throw ContractError("class scores are not a probability vector");
  return ClassScores(values);
}

ClassScores ClassScores::checked(std::span<const double> values) {
  if (values.size() != static_cast<std::size_t>(kNumClasses)) {
    throw ContractError("class scores need exactly 11 components, got " +
                        std::to_string(values.size()));
  }
  Values v{};
  std::copy(values.begin(), values.end(), v.begin());
  return checked(v);
}

ClassScores ClassScores::one_hot(CategoryId id) {
  Values v{};
  v[static_cast<std::size_t>(id.value())] = 1.0;
  return ClassScores(v);
}

ClassScores ClassScores::uniform() {
  Values v{};
  v.fill(1.0 / kNumClasses);
  return ClassScores(v);
}

CategoryId ClassScores::argmax() const noexcept {
  int best = 0;
  for (int i = 1; i < kNumClasses; ++i) {
    if (values_[static_cast<std::size_t>(i)] > values_[static_cast<std::size_t>(best)]) best = i;
  }
  return CategoryId(best);
}

double ClassScores::max() const noexcept { return values_[static_cast<std::size_t>(argmax().value())]; }

ClassScores softmax(std::span<const double> logits) {
  if (logits.size() != static_cast<std::size_t>(kNumClasses)) {
    throw ContractError("softmax expects 11 logits");
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  ClassScores::Values v{};
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = std::exp(logits[i] - peak);
    sum += v[i];
  }
  for (double& x : v) x /= sum;
  return ClassScores::checked(v);
}

}  // namespace ovadet
