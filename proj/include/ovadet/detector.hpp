#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "json.hpp"
#include "ovadet/box.hpp"
#include "ovadet/class_scores.hpp"
#include "ovadet/dataset.hpp"
#include "ovadet/preprocess.hpp"

namespace ovadet {

/// Identifier of the EfficientDet-D0 / EfficientNetV2 detector. Registered, but needs a
/// runtime and pretrained weights this build does not ship.
inline constexpr const char* kEfficientDetBackend = "efficientdet_d0_effnetv2_s";
/// Desk-scale reference: small CNN with a single-scale anchor-free head.
inline constexpr const char* kTinyDetectorBackend = "tiny_cnn";

struct DetectorConfig {
  int input_side = kDetectorSide;
  int num_classes = kNumClasses;
  int epochs = 20;
  int batch_size = 4;
  double learning_rate = 0.0002;
  std::string backbone_id = kEfficientDetBackend;
  double score_threshold = 0.3;
  double nms_iou_threshold = 0.5;
  /// Minimum objectness for a heatmap peak to become a candidate (reference backend).
  double objectness_threshold = 0.3;
  std::uint64_t seed = 0;

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  friend bool operator==(const DetectorConfig&, const DetectorConfig&) = default;
};

void to_json(nlohmann::json& j, const DetectorConfig& c);
void from_json(const nlohmann::json& j, DetectorConfig& c);

struct Detection {
  BoundingBox box;        // source-image coordinates
  ClassScores scores;
  double confidence = 0;  // == scores.max()
  BoundingBox frame_box;  // same box in the detector's normalized input frame
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN without a validation set
};

struct TrainingLog {
  std::string backend;
  bool deterministic = true;
  std::vector<EpochRecord> epochs;
};

/// A training example already encoded by the backend.
struct PreparedSample {
  std::vector<float> input;
  std::vector<Annotation> annotations;  // normalized-frame boxes
};

/// A box proposed by a backend, in the normalized frame.
struct Candidate {
  BoundingBox box;
  ClassScores scores;
  double objectness = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

class DetectorBackend {
 public:
  virtual ~DetectorBackend() = default;

  virtual std::string id() const = 0;
  virtual bool deterministic() const = 0;
  /// Compact encoding of a normalized image; computed once per image during training.
  virtual std::vector<float> prepare(const NormalizedImage& image) const = 0;
  virtual TrainingLog fit(std::span<const PreparedSample> train, std::span<const PreparedSample> val,
                          const DetectorConfig& config, const EpochCallback& on_epoch) = 0;
  virtual std::vector<Candidate> propose(std::span<const float> prepared, const DetectorConfig& config) const = 0;

  virtual std::vector<float> weights() const = 0;
  virtual void set_weights(std::span<const float> weights) = 0;
  virtual std::unique_ptr<DetectorBackend> clone() const = 0;
};

/// Throws CapabilityError for registered-but-unavailable backends (and when OVADET_DEVICE names
/// anything other than "cpu"), ConfigError for unknown ids.
std::unique_ptr<DetectorBackend> make_detector_backend(const std::string& id, const DetectorConfig& config);
std::vector<std::string> registered_detector_backends();

/// Trained detector: backend state, config, category map and training log. Immutable once
/// built; concurrent `detect` calls are safe.
class DetectorModel {
 public:
  DetectorModel(DetectorConfig config, std::unique_ptr<DetectorBackend> backend, TrainingLog log);
  DetectorModel(const DetectorModel& other);
  DetectorModel& operator=(const DetectorModel& other);
  DetectorModel(DetectorModel&&) noexcept = default;
  DetectorModel& operator=(DetectorModel&&) noexcept = default;
  ~DetectorModel() = default;

  const DetectorConfig& config() const noexcept { return config_; }
  const TrainingLog& training_log() const noexcept { return log_; }
  const DetectorBackend& backend() const noexcept { return *backend_; }
  const std::vector<std::string>& categories() const noexcept { return categories_; }

  /// Writes `manifest.json` and `weights.bin` into `dir` (created if needed). Entries of
  /// `extra` are added to the manifest.
  void save(const std::filesystem::path& dir, const nlohmann::json& extra = nlohmann::json::object()) const;
  static DetectorModel load(const std::filesystem::path& dir);

 private:
  DetectorConfig config_;
  std::unique_ptr<DetectorBackend> backend_;
  TrainingLog log_;
  std::vector<std::string> categories_;
};

/// Produces the i-th image of a split on demand, so large datasets need not sit in memory.
using ImageLoader = std::function<AnnotatedImage(std::size_t index)>;

/// Empty `train` throws ConfigError. Callback fires after each epoch.
DetectorModel train_detector(std::size_t train_count, const ImageLoader& train, std::size_t val_count,
                             const ImageLoader& val, const DetectorConfig& config, const EpochCallback& on_epoch = {});
DetectorModel train_detector(std::span<const AnnotatedImage> train, std::span<const AnnotatedImage> val,
                             const DetectorConfig& config, const EpochCallback& on_epoch = {});

/// Boxes in source coordinates, sorted by confidence descending, thresholded and NMS-filtered.
/// Never reads annotations.
std::vector<Detection> detect(const DetectorModel& model, const cv::Mat& rgb);
inline std::vector<Detection> detect(const DetectorModel& model, const AnnotatedImage& img) {
  return detect(model, img.pixels);
}

/// Greedy suppression over candidates sorted by confidence (descending): keep the first, drop
/// any later box whose IOU with a kept box exceeds `iou_threshold`.
std::vector<Detection> nms(std::span<const Detection> candidates, double iou_threshold);

/// `{image_id, detections:[{bbox:[xmin,ymin,xmax,ymax], scores:[11], confidence}]}`
nlohmann::json detections_to_json(const std::string& image_id, std::span<const Detection> detections);

}  // namespace ovadet
