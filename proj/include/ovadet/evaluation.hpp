#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ovadet/dataset.hpp"
#include "ovadet/fusion.hpp"

namespace ovadet {

/// Outcome for one ground-truth object. Unmatched results carry the best IOU any prediction
/// reached against that object (0 with no predictions) and no labels.
struct MatchResult {
  std::string image_id;
  bool matched = false;
  double iou = 0.0;
  std::optional<CategoryId> pred_label;
  std::optional<CategoryId> true_label;
  double pred_confidence = 0.0;
};

/// Greedy one-to-one matching for one image. Predictions are visited by descending confidence
/// (ties keep input order); each takes the still-unmatched ground truth of highest IOU if that
/// IOU reaches `iou_threshold`, otherwise it is discarded. Returns one result per ground truth,
/// in ground-truth order.
std::vector<MatchResult> match_detections(const std::string& image_id, std::span<const FinalPrediction> preds,
                                          std::span<const Annotation> gts, double iou_threshold);

struct Histogram {
  std::vector<std::size_t> counts;  // uniform bins over [0, 1]; value 1 lands in the last bin

  static Histogram of(std::span<const double> values, std::size_t bins);
  std::size_t total() const noexcept;
};

using ConfusionMatrix = std::array<std::array<std::size_t, kNumClasses>, kNumClasses>;  // [true][pred]

struct EvaluationReport {
  Histogram iou_histogram;
  Histogram confidence_histogram;
  ConfusionMatrix confusion{};
  /// trace / matched; empty when nothing matched.
  std::optional<double> accuracy;
  /// trace / (matched + misdetections): mis-detections counted as errors.
  std::optional<double> accuracy_with_misdetections;
  std::array<double, kNumClasses> precision{};
  std::array<double, kNumClasses> recall{};
  std::array<double, kNumClasses> f1{};
  std::array<std::size_t, kNumClasses> support{};
  /// Mean F1 over classes occurring among the matched truths or predictions.
  std::optional<double> macro_f1;
  std::optional<double> micro_f1;
  std::size_t matched = 0;
  std::size_t misdetections = 0;       // results with matched == false
  std::size_t misdetected_images = 0;  // images with no matched result
  std::size_t total_images = 0;
  std::size_t total_objects = 0;
};

EvaluationReport build_report(std::span<const MatchResult> matches, std::size_t bins = 20);

nlohmann::json report_to_json(const EvaluationReport& report);
/// Header row and column of category names; rows are true classes.
std::string confusion_csv(const ConfusionMatrix& confusion);

/// Writes report.json, confusion_matrix.csv, iou_hist.png, confidence_hist.png and
/// confusion_matrix.png into `out_dir`. `extra` is merged into the report JSON (run metadata).
void export_plots(const EvaluationReport& report, const std::filesystem::path& out_dir,
                  const nlohmann::json& extra = nlohmann::json::object());

}  // namespace ovadet
