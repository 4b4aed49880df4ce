#include "ovadet/preprocess.hpp"

#include <cmath>

#include <opencv2/imgproc.hpp>

#include "ovadet/errors.hpp"

namespace ovadet {

namespace {

cv::Mat as_rgb(const cv::Mat& image, std::vector<std::string>* warnings) {
  if (image.empty()) throw ContractError("empty image");
  switch (image.channels()) {
    case 3:
      return image;
    case 1: {
      cv::Mat rgb;
      cv::cvtColor(image, rgb, cv::COLOR_GRAY2RGB);
      if (warnings) warnings->push_back("single-channel image replicated to 3 channels");
      return rgb;
    }
    case 4: {
      cv::Mat rgb;
      cv::cvtColor(image, rgb, cv::COLOR_RGBA2RGB);
      if (warnings) warnings->push_back("alpha channel dropped");
      return rgb;
    }
    default:
      throw ContractError("unsupported channel count: " + std::to_string(image.channels()));
  }
}

}  // namespace

NormalizedImage normalize_square(const cv::Mat& image, int side, std::vector<std::string>* warnings) {
  if (side < 1) throw ContractError("target side must be positive");
  const cv::Mat rgb = as_rgb(image, warnings);
  cv::Mat as_float;
  rgb.convertTo(as_float, CV_32FC3, 1.0 / 255.0);
  cv::Mat resized;
  if (as_float.cols == side && as_float.rows == side) {
    resized = as_float;
  } else {
    cv::resize(as_float, resized, cv::Size(side, side), 0, 0, cv::INTER_LINEAR);
  }

  NormalizedImage out;
  out.side = side;
  out.scale_x = static_cast<double>(rgb.cols) / side;
  out.scale_y = static_cast<double>(rgb.rows) / side;
  out.data.resize(static_cast<std::size_t>(3) * side * side);
  const std::size_t plane = static_cast<std::size_t>(side) * side;
  for (int y = 0; y < side; ++y) {
    const auto* row = resized.ptr<cv::Vec3f>(y);
    for (int x = 0; x < side; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.data[c * plane + static_cast<std::size_t>(y) * side + x] =
            (row[x][c] - ImageNetStats::mean[c]) / ImageNetStats::std[c];
      }
    }
  }
  return out;
}

DetectorInput preprocess_for_detector(const AnnotatedImage& img, int side) {
  DetectorInput out;
  out.image = normalize_square(img.pixels, side, &out.warnings);
  out.annotations.reserve(img.annotations.size());
  for (const auto& a : img.annotations) {
    out.annotations.push_back({to_normalized_frame(a.box, out.image), a.category});
  }
  return out;
}

NormalizedImage preprocess_for_classifier(const cv::Mat& crop, int side, std::vector<std::string>* warnings) {
  return normalize_square(crop, side, warnings);
}

BoundingBox to_normalized_frame(const BoundingBox& box, const NormalizedImage& frame) noexcept {
  return {box.xmin / frame.scale_x, box.ymin / frame.scale_y, box.xmax / frame.scale_x,
          box.ymax / frame.scale_y};
}

BoundingBox to_source_frame(const BoundingBox& box, const NormalizedImage& frame) noexcept {
  return {box.xmin * frame.scale_x, box.ymin * frame.scale_y, box.xmax * frame.scale_x,
          box.ymax * frame.scale_y};
}

cv::Rect crop_region(const BoundingBox& box, int width, int height) {
  const auto clamped = clamp_to_image(box, width, height);
  if (!clamped) throw ContractError("crop box does not intersect the image");
  const int x0 = static_cast<int>(std::floor(clamped->xmin));
  const int y0 = static_cast<int>(std::floor(clamped->ymin));
  const int x1 = static_cast<int>(std::ceil(clamped->xmax));
  const int y1 = static_cast<int>(std::ceil(clamped->ymax));
  return {x0, y0, x1 - x0, y1 - y0};
}

cv::Mat crop_box(const cv::Mat& image, const BoundingBox& box) {
  return image(crop_region(box, image.cols, image.rows)).clone();
}

}  // namespace ovadet
