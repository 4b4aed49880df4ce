#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <opencv2/core.hpp>

#include "json.hpp"
#include "ovadet/box.hpp"
#include "ovadet/class_scores.hpp"
#include "ovadet/dataset.hpp"
#include "ovadet/detector.hpp"
#include "ovadet/features.hpp"
#include "ovadet/svm.hpp"

namespace ovadet {

/// One fused decision for one detected box. `label` is argmax(fused) with lowest-index
/// tie-break and `confidence` is fused[label]; the two input distributions are kept for audit.
struct FinalPrediction {
  std::string image_id;
  BoundingBox box;
  ClassScores fused;
  CategoryId label;
  double confidence = 0.0;
  ClassScores det_scores;
  ClassScores svm_scores;
};

/// Componentwise mean of the detector and classifier distributions.
ClassScores fuse_average(const ClassScores& p_det, const ClassScores& p_svm);
/// Same for unchecked vectors; throws ContractError unless both are on the 11-simplex.
ClassScores fuse_average(std::span<const double> p_det, std::span<const double> p_svm);

/// (argmax with lowest-index tie-break, winning component).
std::pair<CategoryId, double> final_label(const ClassScores& fused) noexcept;

/// Throws ConfigError when the detector and SVM disagree on the category map or the SVM was
/// trained on features from a different extractor.
void check_pipeline_compatible(const DetectorModel& det, const SvmModel& svm, const FeatureExtractor& extractor);

/// detect -> crop -> preprocess_for_classifier -> extract_features -> classify -> fuse, per
/// surviving detection. An empty result marks the image as a mis-detection.
std::vector<FinalPrediction> predict_pipeline(const DetectorModel& det, const SvmModel& svm,
                                              const FeatureExtractor& extractor, const std::string& image_id,
                                              const cv::Mat& rgb);
inline std::vector<FinalPrediction> predict_pipeline(const DetectorModel& det, const SvmModel& svm,
                                                     const FeatureExtractor& extractor, const AnnotatedImage& img) {
  return predict_pipeline(det, svm, extractor, img.image_id, img.pixels);
}

/// Per-image outcome of a prediction run, as recorded in the predictions file.
struct ImageOutcome {
  std::string image_id;
  std::size_t num_predictions = 0;
};

struct PredictionError {
  std::string file;
  std::string message;
};

struct PredictionSet {
  std::vector<FinalPrediction> predictions;
  std::vector<ImageOutcome> images;
  std::vector<PredictionError> errors;
};

/// `{format_version, config_hash, predictions:[{image_id, bbox, label_id, label_name, confidence,
/// fused_scores, det_scores, svm_scores}], images:[{image_id, num_predictions, misdetected}],
/// errors:[{file, message}]}`
nlohmann::json predictions_to_json(const PredictionSet& set, const std::string& config_hash);
/// Throws SchemaError on malformed input.
PredictionSet predictions_from_json(const nlohmann::json& doc);

}  // namespace ovadet
