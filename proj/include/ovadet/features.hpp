#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ovadet/box.hpp"
#include "ovadet/preprocess.hpp"

namespace ovadet {

inline constexpr int kFeatureDim = 2560;

/// ImageNet-pretrained EfficientNet-B7 pooled features. Registered
/// but not runnable in this build.
inline constexpr const char* kEfficientNetExtractor = "efficientnet_b7_imagenet";
/// Desk-scale stand-in: small CNN with fixed seeded weights and a frozen projection to 2560.
inline constexpr const char* kTinyExtractor = "tiny_frozen_cnn";

/// A 2560-wide pooled deep feature.
class FeatureVector {
 public:
  FeatureVector() : values_(kFeatureDim, 0.0f) {}
  /// Throws ContractError unless `values` has exactly kFeatureDim entries.
  explicit FeatureVector(std::vector<float> values);

  std::span<const float> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  float operator[](std::size_t i) const noexcept { return values_[i]; }
  bool finite() const noexcept;

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;

 private:
  std::vector<float> values_;
};

/// A frozen, pretrained feature backbone. Implementations are pure functions of their input.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string id() const = 0;
  virtual std::uint64_t seed() const = 0;
  virtual int input_side() const = 0;
  virtual FeatureVector extract(const NormalizedImage& crop) const = 0;
};

/// Throws CapabilityError for the unavailable EfficientNet-B7 backbone, ConfigError for unknown ids.
std::unique_ptr<FeatureExtractor> make_feature_extractor(const std::string& id, std::uint64_t seed);

/// Throws ContractError when the crop side differs from the extractor's input side.
FeatureVector extract_features(const FeatureExtractor& extractor, const NormalizedImage& crop600);

/// Optional on-disk memo of features keyed by (image id, box).
class FeatureCache {
 public:
  static std::string key(const std::string& image_id, const BoundingBox& box);

  const FeatureVector* find(const std::string& key) const;
  void insert(const std::string& key, FeatureVector value);
  std::size_t size() const noexcept { return entries_.size(); }

  void save(const std::filesystem::path& path) const;
  static FeatureCache load(const std::filesystem::path& path);

 private:
  std::map<std::string, FeatureVector> entries_;
};

}  // namespace ovadet
