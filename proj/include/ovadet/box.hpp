#pragma once

#include <algorithm>
#include <optional>

namespace ovadet {

/// Axis-aligned rectangle in pixel coordinates (origin top-left, corner form).
struct BoundingBox {
  double xmin = 0.0;
  double ymin = 0.0;
  double xmax = 0.0;
  double ymax = 0.0;

  double width() const noexcept { return xmax - xmin; }
  double height() const noexcept { return ymax - ymin; }
  double area() const noexcept { return std::max(0.0, width()) * std::max(0.0, height()); }
  bool valid() const noexcept { return xmin < xmax && ymin < ymax; }

  /// Construct from the on-disk [x, y, w, h] layout.
  static BoundingBox from_xywh(double x, double y, double w, double h) noexcept {
    return {x, y, x + w, y + h};
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Clamp to [0,width]x[0,height]; nullopt when nothing of the box remains inside.
std::optional<BoundingBox> clamp_to_image(const BoundingBox& box, double width, double height);

/// Intersection over union of two boxes, computed over continuous area. Returns 0 when the
/// union is empty.
double iou(const BoundingBox& a, const BoundingBox& b) noexcept;

}  // namespace ovadet
