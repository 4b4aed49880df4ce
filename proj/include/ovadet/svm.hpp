#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ovadet/categories.hpp"
#include "ovadet/class_scores.hpp"
#include "ovadet/features.hpp"

namespace ovadet {

struct SvmConfig {
  double C = 5.0;
  std::string kernel = "rbf";           // "rbf" | "linear"
  std::string gamma_policy = "scale";   // "scale": 1/(d * var(X)) | "fixed": use `gamma`
  double gamma = 0.0;
  std::string calibration = "platt";    // per-class monotone logistic on the holdout margins
  std::string train_on = "gt";          // "gt" | "pred": source of training crops
  std::string extractor_id = kEfficientNetExtractor;
  std::uint64_t extractor_seed = 0;
  double tolerance = 1e-3;

  void validate() const;

  friend bool operator==(const SvmConfig&, const SvmConfig&) = default;
};

void to_json(nlohmann::json& j, const SvmConfig& c);
void from_json(const nlohmann::json& j, SvmConfig& c);

/// One-vs-rest kernel SVM with per-class Platt calibration. Predictions are normalized over the
/// classes seen in training; unseen classes get probability 0.
class SvmModel {
 public:
  std::size_t dim() const noexcept { return dim_; }
  std::size_t support_count() const noexcept { return support_.size() / std::max<std::size_t>(dim_, 1); }
  double gamma() const noexcept { return gamma_; }
  const std::string& kernel() const noexcept { return kernel_; }
  const std::string& extractor_id() const noexcept { return extractor_id_; }
  std::uint64_t extractor_seed() const noexcept { return extractor_seed_; }
  const std::vector<std::string>& categories() const noexcept { return categories_; }
  double train_accuracy() const noexcept { return train_accuracy_; }
  /// NaN when no holdout was supplied.
  double holdout_accuracy() const noexcept { return holdout_accuracy_; }
  const std::string& calibration_source() const noexcept { return calibration_source_; }

  /// Raw one-vs-rest margins, one per class (absent classes report -inf).
  std::array<double, kNumClasses> margins(std::span<const float> x) const;

  /// `extra` entries are stored in the self-describing header.
  void save(const std::filesystem::path& path, const nlohmann::json& extra = nlohmann::json::object()) const;
  static SvmModel load(const std::filesystem::path& path);

 private:
  friend SvmModel train_svm(std::span<const FeatureVector>, std::span<const CategoryId>, const SvmConfig&,
                            std::span<const FeatureVector>, std::span<const CategoryId>);
  friend ClassScores classify(const SvmModel&, const FeatureVector&);

  std::size_t dim_ = 0;
  std::string kernel_ = "rbf";
  double gamma_ = 0.0;
  double C_ = 0.0;
  std::vector<float> support_;   // support_count x dim, row-major
  std::vector<double> sq_norms_; // |sv|^2 per support vector
  std::vector<double> coef_;     // support_count x 11: alpha_i * y_i for each class problem
  std::array<double, kNumClasses> rho_{};
  std::array<bool, kNumClasses> present_{};
  std::array<double, kNumClasses> platt_a_{};
  std::array<double, kNumClasses> platt_b_{};
  std::string extractor_id_;
  std::uint64_t extractor_seed_ = 0;
  std::vector<std::string> categories_;
  double train_accuracy_ = 0.0;
  double holdout_accuracy_ = 0.0;
  std::string calibration_source_;
};

/// Train on labelled features; the holdout (may be empty) fits the calibration. Throws
/// ContractError with fewer than two classes, mismatched lengths, or a non-finite feature
/// (the message names the offending index).
SvmModel train_svm(std::span<const FeatureVector> features, std::span<const CategoryId> labels,
                   const SvmConfig& config, std::span<const FeatureVector> holdout_features = {},
                   std::span<const CategoryId> holdout_labels = {});

/// Calibrated 11-way probabilities. Throws ContractError on dimension mismatch or non-finite input.
ClassScores classify(const SvmModel& model, const FeatureVector& feat);

/// Fits P(y=1|f) = 1 / (1 + exp(A f + B)) by Newton's method with backtracking, using the
/// regularized targets (N+ + 1)/(N+ + 2) and 1/(N- + 2).
std::pair<double, double> fit_platt(std::span<const double> margins, const std::vector<bool>& positive);

}  // namespace ovadet
