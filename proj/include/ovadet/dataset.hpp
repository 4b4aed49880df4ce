#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "json.hpp"
#include "ovadet/box.hpp"
#include "ovadet/categories.hpp"

namespace ovadet {

struct Annotation {
  BoundingBox box;
  CategoryId category;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

/// An image with its ground truth. `pixels` is 8-bit RGB (channel order R, G, B).
struct AnnotatedImage {
  std::string image_id;
  cv::Mat pixels;
  std::vector<Annotation> annotations;

  int width() const noexcept { return pixels.cols; }
  int height() const noexcept { return pixels.rows; }
};

/// One entry of an annotation file, without pixel data.
struct ImageRecord {
  std::string image_id;
  std::string file_name;
  int width = 0;
  int height = 0;
  std::vector<Annotation> annotations;
};

struct AnnotationFile {
  std::vector<ImageRecord> images;
  /// Rejected records (degenerate boxes and similar), one line each.
  std::vector<std::string> warnings;
};

/// Parse the COCO-style schema: `images` [{id, file_name, width, height}], `annotations`
/// [{image_id, bbox:[x,y,w,h], category_id}], `categories` [{id, name}]. Category names are
/// mapped onto the fixed CategoryIds; an unknown name throws SchemaError. Boxes with
/// non-positive extent are dropped with a warning.
AnnotationFile parse_annotations(const nlohmann::json& doc);
AnnotationFile read_annotations(const std::filesystem::path& path);

/// Inverse of parse_annotations; categories are always written with the canonical names.
nlohmann::json to_annotation_json(std::span<const ImageRecord> records);

struct LoadedDataset {
  std::vector<AnnotatedImage> images;
  std::vector<std::string> errors;    // one per unreadable image
  std::vector<std::string> warnings;  // rejected records, channel conversions
  std::array<std::size_t, kNumClasses> per_category{};
};

/// Read the annotation file and every referenced image under `root`. Unreadable images are
/// skipped and itemized in `errors`; the caller decides whether that is fatal.
LoadedDataset load_dataset(const std::filesystem::path& root,
                           const std::filesystem::path& annotation_path);

/// Decode an image file into 8-bit RGB. Grayscale is replicated, alpha dropped; a note is
/// appended to `warnings` when a conversion happened. Throws IoError if unreadable.
cv::Mat read_rgb_image(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);
void write_rgb_image(const std::filesystem::path& path, const cv::Mat& rgb);

/// Write images as PNG under `root/images` plus `root/annotations.json`.
void write_dataset(const std::filesystem::path& root, std::span<const AnnotatedImage> images);

struct SplitSpec {
  double train_frac = 0.6;
  double val_frac = 0.2;
  double test_frac = 0.2;
  std::uint64_t seed = 0;

  /// Throws ConfigError unless all fractions are >= 0 and sum to 1 within 1e-9.
  void validate() const;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Stratified split over items labelled by `strata`. Within each stratum of n items, val and
/// test receive floor(n*frac) items and train takes the remainder. Each output list is in
/// ascending input order.
SplitIndices split_indices(std::span<const int> strata, const SplitSpec& spec);

/// Stratum of an image: category of its first annotation, -1 for unannotated images.
int stratum_of(std::span<const Annotation> annotations) noexcept;

template <typename T>
struct Splits {
  std::vector<T> train;
  std::vector<T> val;
  std::vector<T> test;
};

Splits<AnnotatedImage> split_dataset(std::span<const AnnotatedImage> dataset, const SplitSpec& spec);
Splits<ImageRecord> split_dataset(std::span<const ImageRecord> dataset, const SplitSpec& spec);

}  // namespace ovadet
