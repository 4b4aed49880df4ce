#include "ovadet/commands.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>

#include <opencv2/core.hpp>

#include "ovadet/errors.hpp"

namespace ovadet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* const kSplitNames[] = {"train", "val", "test"};

/// One JSON object per line; the file is truncated when opened.
class JsonlLog {
 public:
  explicit JsonlLog(const fs::path& path) {
    fs::create_directories(path.parent_path());
    out_.open(path, std::ios::trunc);
    if (!out_) throw IoError("cannot write log " + path.string());
  }
  void write(const json& record) { out_ << record.dump() << '\n' << std::flush; }

 private:
  std::ofstream out_;
};

void write_json(const fs::path& path, const json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string() + " is not valid JSON: " + e.what());
  }
}

void ensure_output_dir(const RunConfig& config) {
  std::error_code ec;
  fs::create_directories(config.paths.output_dir, ec);
  if (ec) throw ConfigError("output directory " + config.paths.output_dir + " cannot be created: " + ec.message());
}

/// Annotation records keyed by image id.
std::map<std::string, ImageRecord> index_records(const AnnotationFile& file) {
  std::map<std::string, ImageRecord> by_id;
  for (const auto& r : file.images) by_id.emplace(r.image_id, r);
  return by_id;
}

std::vector<ImageRecord> records_of_split(const RunConfig& config, const std::map<std::string, ImageRecord>& by_id,
                                          const std::string& split) {
  const fs::path manifest = Layout::of(config).splits / (split + ".json");
  if (!fs::exists(manifest)) {
    throw IoError("split manifest " + manifest.string() + " not found; run `ovadet split` with this config first");
  }
  std::vector<ImageRecord> out;
  for (const auto& id : read_manifest(manifest)) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw SchemaError("manifest " + manifest.string() + " names unknown image '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

AnnotatedImage load_record(const RunConfig& config, const ImageRecord& r) {
  return {r.image_id, read_rgb_image(fs::path(config.paths.dataset_root) / r.file_name), r.annotations};
}

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  static const std::set<std::string> known = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};
  return known.contains(ext);
}

struct PredictInput {
  std::string image_id;
  fs::path file;
};

std::vector<PredictInput> gather_inputs(const RunConfig& config, const PredictOptions& opts) {
  std::vector<PredictInput> inputs;
  if (opts.input) {
    const fs::path& in = *opts.input;
    if (fs::is_directory(in)) {
      for (const auto& entry : fs::directory_iterator(in)) {
        if (entry.is_regular_file() && is_image_file(entry.path())) {
          inputs.push_back({entry.path().stem().string(), entry.path()});
        }
      }
      std::sort(inputs.begin(), inputs.end(), [](const auto& a, const auto& b) { return a.file < b.file; });
    } else if (fs::exists(in)) {
      inputs.push_back({in.stem().string(), in});
    } else {
      throw IoError("input " + in.string() + " does not exist");
    }
    return inputs;
  }
  const auto by_id = index_records(read_annotations(config.paths.annotations));
  for (const auto& r : records_of_split(config, by_id, opts.split.value_or("test"))) {
    inputs.push_back({r.image_id, fs::path(config.paths.dataset_root) / r.file_name});
  }
  return inputs;
}

/// Features of every ground-truth crop in `records`.
void gt_features(const RunConfig& config, const FeatureExtractor& extractor, std::span<const ImageRecord> records,
                 std::vector<FeatureVector>& features, std::vector<CategoryId>& labels) {
  for (const auto& r : records) {
    const AnnotatedImage img = load_record(config, r);
    for (const auto& a : img.annotations) {
      features.push_back(
          extract_features(extractor, preprocess_for_classifier(crop_box(img, a.box), extractor.input_side())));
      labels.push_back(a.category);
    }
  }
}

/// Features of detector proposals that match a ground-truth box, labelled by that box.
void predicted_features(const RunConfig& config, const DetectorModel& det, const FeatureExtractor& extractor,
                        std::span<const ImageRecord> records, std::vector<FeatureVector>& features,
                        std::vector<CategoryId>& labels) {
  for (const auto& r : records) {
    const AnnotatedImage img = load_record(config, r);
    std::vector<bool> taken(img.annotations.size(), false);
    for (const auto& d : detect(det, img)) {
      double best = 0.0;
      std::size_t best_gt = img.annotations.size();
      for (std::size_t g = 0; g < img.annotations.size(); ++g) {
        const double v = iou(d.box, img.annotations[g].box);
        if (!taken[g] && v > best) {
          best = v;
          best_gt = g;
        }
      }
      if (best_gt == img.annotations.size() || best < config.evaluation.iou_threshold) continue;
      taken[best_gt] = true;
      features.push_back(
          extract_features(extractor, preprocess_for_classifier(crop_box(img, d.box), extractor.input_side())));
      labels.push_back(img.annotations[best_gt].category);
    }
  }
}

void train_detector_stage(const RunConfig& config, const std::map<std::string, ImageRecord>& by_id) {
  const Layout layout = Layout::of(config);
  const DetectorConfig dc = config.detector_config();
  make_detector_backend(dc.backbone_id, dc);  // fail fast on capability before touching data

  const auto train = records_of_split(config, by_id, "train");
  const auto val = records_of_split(config, by_id, "val");
  JsonlLog log(layout.logs / "detector_train.jsonl");
  const DetectorModel model = train_detector(
      train.size(), [&](std::size_t i) { return load_record(config, train[i]); }, val.size(),
      [&](std::size_t i) { return load_record(config, val[i]); }, dc,
      [&](const EpochRecord& e) {
        log.write({{"stage", "detector"},
                   {"epoch", e.epoch},
                   {"train_loss", nullable(e.train_loss)},
                   {"val_loss", nullable(e.val_loss)}});
      });
  model.save(layout.detector_checkpoint, {{"config_hash", config_hash(config)}});
}

void train_svm_stage(const RunConfig& config, const std::map<std::string, ImageRecord>& by_id) {
  const Layout layout = Layout::of(config);
  const auto extractor = make_feature_extractor(config.svm.extractor_id, config.svm.extractor_seed);

  const auto train = records_of_split(config, by_id, "train");
  const auto val = records_of_split(config, by_id, "val");
  std::vector<FeatureVector> x;
  std::vector<CategoryId> y;
  if (config.svm.train_on == "pred") {
    if (!fs::exists(layout.detector_checkpoint / "manifest.json")) {
      throw IoError("svm.train_on=pred needs a detector checkpoint; run `ovadet train --stage detector` first");
    }
    predicted_features(config, DetectorModel::load(layout.detector_checkpoint), *extractor, train, x, y);
  } else {
    gt_features(config, *extractor, train, x, y);
  }
  std::vector<FeatureVector> hx;
  std::vector<CategoryId> hy;
  gt_features(config, *extractor, val, hx, hy);

  const SvmModel model = train_svm(x, y, config.svm, hx, hy);
  fs::create_directories(layout.svm_model.parent_path());
  model.save(layout.svm_model, {{"config_hash", config_hash(config)}});

  JsonlLog log(layout.logs / "svm_train.jsonl");
  log.write({{"stage", "svm"},
             {"train_samples", x.size()},
             {"holdout_samples", hx.size()},
             {"support_vectors", model.support_count()},
             {"gamma", model.gamma()},
             {"train_accuracy", nullable(model.train_accuracy())},
             {"holdout_accuracy", nullable(model.holdout_accuracy())},
             {"calibration_source", model.calibration_source()}});
}

/// Best IOU of `box` against the ground truth of its image.
double best_iou(const BoundingBox& box, std::span<const Annotation> gts) {
  double best = 0.0;
  for (const auto& g : gts) best = std::max(best, iou(box, g.box));
  return best;
}

}  // namespace

Layout Layout::of(const RunConfig& config) {
  const fs::path out = config.paths.output_dir;
  const fs::path ckpt = config.paths.checkpoints;
  return {out / "splits", out / "logs", ckpt / "detector", ckpt / "svm" / "model.bin", out / "predictions.json",
          out / "eval"};
}

void cmd_synth(const SynthConfig& synth, std::uint64_t seed, const fs::path& out_dir) {
  synth.validate();
  const auto images = synth_generate(synth, seed);
  write_dataset(out_dir, images);
}

SplitSummary cmd_split(const RunConfig& config) {
  config.validate();
  ensure_output_dir(config);
  const AnnotationFile file = read_annotations(config.paths.annotations);
  const auto splits = split_dataset(std::span<const ImageRecord>(file.images), config.split_spec());
  const Layout layout = Layout::of(config);
  const std::string hash = config_hash(config);
  const std::vector<ImageRecord>* parts[] = {&splits.train, &splits.val, &splits.test};

  JsonlLog log(layout.logs / "split.jsonl");
  for (std::size_t i = 0; i < 3; ++i) {
    json ids = json::array();
    for (const auto& r : *parts[i]) ids.push_back(r.image_id);
    write_json(layout.splits / (std::string(kSplitNames[i]) + ".json"),
               {{"format_version", kArtifactFormat}, {"config_hash", hash}, {"split", kSplitNames[i]}, {"image_ids", ids}});
    log.write({{"stage", "split"}, {"split", kSplitNames[i]}, {"images", parts[i]->size()}});
  }
  for (const auto& w : file.warnings) log.write({{"stage", "split"}, {"warning", w}});
  return {splits.train.size(), splits.val.size(), splits.test.size()};
}

Stage parse_stage(const std::string& s) {
  if (s == "detector") return Stage::kDetector;
  if (s == "svm") return Stage::kSvm;
  if (s == "all") return Stage::kAll;
  throw ConfigError("unknown stage '" + s + "' (expected detector, svm or all)");
}

void cmd_train(const RunConfig& config, Stage stage) {
  config.validate();
  ensure_output_dir(config);
  const auto by_id = index_records(read_annotations(config.paths.annotations));
  if (stage != Stage::kSvm) train_detector_stage(config, by_id);
  if (stage != Stage::kDetector) train_svm_stage(config, by_id);
}

PredictionSet cmd_predict(const RunConfig& config, const PredictOptions& opts) {
  config.validate();
  if (opts.input && opts.split) throw ConfigError("pass either an input path or a split, not both");
  const Layout layout = Layout::of(config);
  for (const fs::path& p : {layout.detector_checkpoint / "manifest.json", layout.svm_model}) {
    if (!fs::exists(p)) throw IoError("checkpoint " + p.string() + " not found; run `ovadet train` first");
  }
  const DetectorModel det = DetectorModel::load(layout.detector_checkpoint);
  const SvmModel svm = SvmModel::load(layout.svm_model);
  const auto extractor = make_feature_extractor(svm.extractor_id(), svm.extractor_seed());
  check_pipeline_compatible(det, svm, *extractor);

  PredictionSet set;
  for (const auto& in : gather_inputs(config, opts)) {
    try {
      const cv::Mat rgb = read_rgb_image(in.file);
      auto preds = predict_pipeline(det, svm, *extractor, in.image_id, rgb);
      set.images.push_back({in.image_id, preds.size()});
      for (auto& p : preds) set.predictions.push_back(std::move(p));
    } catch (const Error& e) {
      set.errors.push_back({in.file.string(), e.what()});
    } catch (const cv::Exception& e) {
      set.errors.push_back({in.file.string(), e.what()});
    }
  }
  write_json(opts.out.value_or(layout.predictions), predictions_to_json(set, config_hash(config)));
  return set;
}

EvaluationReport cmd_evaluate(const RunConfig& config, const EvaluateOptions& opts) {
  config.validate();
  const Layout layout = Layout::of(config);
  const PredictionSet set = predictions_from_json(read_json(opts.predictions.value_or(layout.predictions)));
  const AnnotationFile truth = read_annotations(opts.ground_truth.value_or(fs::path(config.paths.annotations)));
  const auto by_id = index_records(truth);

  std::vector<std::string> mismatches;
  std::set<std::string> predicted_ids;
  for (const auto& im : set.images) {
    predicted_ids.insert(im.image_id);
    if (!by_id.contains(im.image_id)) mismatches.push_back("image '" + im.image_id + "' has no ground truth");
  }
  for (const auto& p : set.predictions) {
    if (!predicted_ids.contains(p.image_id)) {
      mismatches.push_back("prediction for image '" + p.image_id + "' missing from the image list");
    }
  }
  std::vector<std::string> scope;
  if (opts.split) {
    for (const auto& r : records_of_split(config, by_id, *opts.split)) {
      scope.push_back(r.image_id);
      if (!predicted_ids.contains(r.image_id)) {
        mismatches.push_back("image '" + r.image_id + "' of split " + *opts.split + " has no predictions entry");
      }
    }
  } else {
    scope.assign(predicted_ids.begin(), predicted_ids.end());
  }
  if (!mismatches.empty()) throw ItemizedError("predictions and ground truth disagree on image ids", mismatches);

  std::map<std::string, std::vector<FinalPrediction>> preds_by_image;
  for (const auto& p : set.predictions) preds_by_image[p.image_id].push_back(p);

  std::vector<MatchResult> matches;
  std::vector<double> all_ious;
  std::vector<double> all_confidences;
  for (const auto& id : scope) {
    const auto& gts = by_id.at(id).annotations;
    const auto& preds = preds_by_image[id];
    auto m = match_detections(id, preds, gts, config.evaluation.iou_threshold);
    matches.insert(matches.end(), m.begin(), m.end());
    for (const auto& p : preds) {
      all_ious.push_back(best_iou(p.box, gts));
      all_confidences.push_back(p.confidence);
    }
  }
  EvaluationReport report = build_report(matches, config.evaluation.bins);
  if (config.evaluation.histogram == "all") {
    report.iou_histogram = Histogram::of(all_ious, config.evaluation.bins);
    report.confidence_histogram = Histogram::of(all_confidences, config.evaluation.bins);
  }
  const json extra{{"config_hash", config_hash(config)},
                   {"iou_threshold", config.evaluation.iou_threshold},
                   {"histogram", config.evaluation.histogram},
                   {"split", opts.split ? json(*opts.split) : json(nullptr)},
                   {"prediction_errors", set.errors.size()}};
  export_plots(report, opts.out_dir.value_or(layout.evaluation), extra);
  return report;
}

std::vector<std::string> read_manifest(const fs::path& path) {
  const json doc = read_json(path);
  try {
    if (doc.at("format_version").get<int>() != kArtifactFormat) {
      throw SchemaError("unsupported manifest format in " + path.string());
    }
    return doc.at("image_ids").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw SchemaError("malformed manifest " + path.string() + ": " + e.what());
  }
}

}  // namespace ovadet::cli
