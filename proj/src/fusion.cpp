#include "ovadet/fusion.hpp"

#include "ovadet/errors.hpp"
#include "ovadet/preprocess.hpp"

namespace ovadet {

using nlohmann::json;

namespace {

constexpr int kPredictionsFormat = 1;

ClassScores scores_from(const json& j, const char* field) {
  try {
    return ClassScores::checked(j.at(field).get<std::vector<double>>());
  } catch (const ContractError& e) {
    throw SchemaError(std::string("prediction field '") + field + "': " + e.what());
  }
}

}  // namespace

ClassScores fuse_average(const ClassScores& p_det, const ClassScores& p_svm) {
  ClassScores::Values out{};
  for (int i = 0; i < kNumClasses; ++i) out[static_cast<std::size_t>(i)] = (p_det[i] + p_svm[i]) / 2.0;
  return ClassScores::checked(out);
}

ClassScores fuse_average(std::span<const double> p_det, std::span<const double> p_svm) {
  if (!ClassScores::is_simplex(p_det)) throw ContractError("detector scores are not on the 11-simplex");
  if (!ClassScores::is_simplex(p_svm)) throw ContractError("classifier scores are not on the 11-simplex");
  return fuse_average(ClassScores::checked(p_det), ClassScores::checked(p_svm));
}

std::pair<CategoryId, double> final_label(const ClassScores& fused) noexcept {
  const CategoryId label = fused.argmax();
  return {label, fused[label.value()]};
}

void check_pipeline_compatible(const DetectorModel& det, const SvmModel& svm, const FeatureExtractor& extractor) {
  if (det.categories() != svm.categories()) {
    throw ConfigError("detector and SVM checkpoints use different category maps");
  }
  if (svm.extractor_id() != extractor.id() || svm.extractor_seed() != extractor.seed()) {
    throw ConfigError("SVM was trained on features from '" + svm.extractor_id() + "' (seed " +
                      std::to_string(svm.extractor_seed()) + "), but extractor '" + extractor.id() + "' (seed " +
                      std::to_string(extractor.seed()) + ") was supplied");
  }
  if (svm.dim() != static_cast<std::size_t>(kFeatureDim)) throw ConfigError("SVM feature dimension is not 2560");
}

std::vector<FinalPrediction> predict_pipeline(const DetectorModel& det, const SvmModel& svm,
                                              const FeatureExtractor& extractor, const std::string& image_id,
                                              const cv::Mat& rgb) {
  check_pipeline_compatible(det, svm, extractor);
  std::vector<FinalPrediction> out;
  for (const auto& d : detect(det, rgb)) {
    const NormalizedImage crop = preprocess_for_classifier(crop_box(rgb, d.box), extractor.input_side());
    const ClassScores svm_scores = classify(svm, extract_features(extractor, crop));
    const ClassScores fused = fuse_average(d.scores, svm_scores);
    const auto [label, confidence] = final_label(fused);
    out.push_back({image_id, d.box, fused, label, confidence, d.scores, svm_scores});
  }
  return out;
}

json predictions_to_json(const PredictionSet& set, const std::string& config_hash) {
  json preds = json::array();
  for (const auto& p : set.predictions) {
    preds.push_back({{"image_id", p.image_id},
                     {"bbox", {p.box.xmin, p.box.ymin, p.box.xmax, p.box.ymax}},
                     {"label_id", p.label.value()},
                     {"label_name", std::string(p.label.name())},
                     {"confidence", p.confidence},
                     {"fused_scores", p.fused.values()},
                     {"det_scores", p.det_scores.values()},
                     {"svm_scores", p.svm_scores.values()}});
  }
  json images = json::array();
  for (const auto& im : set.images) {
    images.push_back({{"image_id", im.image_id},
                      {"num_predictions", im.num_predictions},
                      {"misdetected", im.num_predictions == 0}});
  }
  json errors = json::array();
  for (const auto& e : set.errors) errors.push_back({{"file", e.file}, {"message", e.message}});
  return {{"format_version", kPredictionsFormat},
          {"config_hash", config_hash},
          {"predictions", preds},
          {"images", images},
          {"errors", errors}};
}

PredictionSet predictions_from_json(const json& doc) {
  PredictionSet set;
  try {
    if (doc.at("format_version").get<int>() != kPredictionsFormat) {
      throw SchemaError("unsupported predictions format version");
    }
    for (const auto& p : doc.at("predictions")) {
      const auto& b = p.at("bbox");
      if (!b.is_array() || b.size() != 4) throw SchemaError("prediction bbox must be [xmin, ymin, xmax, ymax]");
      FinalPrediction fp;
      fp.image_id = p.at("image_id").get<std::string>();
      fp.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
      fp.fused = scores_from(p, "fused_scores");
      fp.det_scores = scores_from(p, "det_scores");
      fp.svm_scores = scores_from(p, "svm_scores");
      const int label = p.at("label_id").get<int>();
      if (label < 0 || label >= kNumClasses) throw SchemaError("prediction label_id out of range");
      fp.label = CategoryId(label);
      fp.confidence = p.at("confidence").get<double>();
      set.predictions.push_back(std::move(fp));
    }
    for (const auto& im : doc.at("images")) {
      set.images.push_back({im.at("image_id").get<std::string>(), im.at("num_predictions").get<std::size_t>()});
    }
    if (doc.contains("errors")) {
      for (const auto& e : doc.at("errors")) {
        set.errors.push_back({e.at("file").get<std::string>(), e.at("message").get<std::string>()});
      }
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed predictions file: ") + e.what());
  }
  return set;
}

}  // namespace ovadet
