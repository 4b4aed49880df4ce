#pragma once

#include <array>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "ovadet/box.hpp"
#include "ovadet/dataset.hpp"

namespace ovadet {

/// ImageNet per-channel statistics (RGB order) applied as (v/255 - mean) / std.
struct ImageNetStats {
  static constexpr std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
  static constexpr std::array<float, 3> std{0.229f, 0.224f, 0.225f};
};

inline constexpr int kDetectorSide = 512;
inline constexpr int kClassifierSide = 600;

/// Square, channel-normalized float image in CHW layout. `scale_x`/`scale_y` map a coordinate
/// in this frame back to the source image: x_src = x * scale_x.
struct NormalizedImage {
  int side = 0;
  std::vector<float> data;
  double scale_x = 1.0;
  double scale_y = 1.0;

  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * side + y) * side + x];
  }
};

struct DetectorInput {
  NormalizedImage image;
  std::vector<Annotation> annotations;  // boxes in the normalized frame
  std::vector<std::string> warnings;
};

/// Bilinear resize to side x side, then ImageNet normalization. Non-3-channel input is
/// converted (grayscale replicated) with a warning.
NormalizedImage normalize_square(const cv::Mat& image, int side,
                                 std::vector<std::string>* warnings = nullptr);

DetectorInput preprocess_for_detector(const AnnotatedImage& img, int side = kDetectorSide);
NormalizedImage preprocess_for_classifier(const cv::Mat& crop, int side = kClassifierSide,
                                          std::vector<std::string>* warnings = nullptr);

BoundingBox to_normalized_frame(const BoundingBox& box, const NormalizedImage& frame) noexcept;
BoundingBox to_source_frame(const BoundingBox& box, const NormalizedImage& frame) noexcept;

/// Pixel region covered by `box` after clamping to the image: columns floor(xmin)..ceil(xmax).
/// Throws ContractError when the box does not intersect the image.
cv::Rect crop_region(const BoundingBox& box, int width, int height);

/// Deep copy of the clamped box region; no padding is added.
cv::Mat crop_box(const cv::Mat& image, const BoundingBox& box);
inline cv::Mat crop_box(const AnnotatedImage& img, const BoundingBox& box) {
  return crop_box(img.pixels, box);
}

}  // namespace ovadet
