#include "ovadet/detector.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>

#include "ovadet/errors.hpp"
#include "tiny_detector.hpp"

namespace ovadet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kCheckpointFormat = 1;
constexpr char kWeightsMagic[8] = {'O', 'V', 'D', 'W', 'T', 'S', '0', '1'};

void check_device() {
  if (const char* dev = std::getenv("OVADET_DEVICE"); dev != nullptr && *dev != '\0' && std::string(dev) != "cpu") {
    throw CapabilityError(std::string("compute device '") + dev + "' is not supported by this build (only 'cpu')");
  }
}

json nan_to_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double null_to_nan(const json& v) { return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>(); }

std::vector<std::string> canonical_categories() {
  return {category_names().begin(), category_names().end()};
}

}  // namespace

void DetectorConfig::validate() const {
  if (input_side < 1) throw ConfigError("detector.input_side must be positive");
  if (num_classes != kNumClasses) throw ConfigError("detector.num_classes must be 11");
  if (epochs < 1) throw ConfigError("detector.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("detector.batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("detector.learning_rate must be > 0");
  for (double t : {score_threshold, nms_iou_threshold, objectness_threshold}) {
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("detector thresholds must lie in [0,1]");
  }
  if (backbone_id.empty()) throw ConfigError("detector.backbone_id is empty");
}

void to_json(json& j, const DetectorConfig& c) {
  j = json{{"input_side", c.input_side},
           {"num_classes", c.num_classes},
           {"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"learning_rate", c.learning_rate},
           {"backbone_id", c.backbone_id},
           {"score_threshold", c.score_threshold},
           {"nms_iou_threshold", c.nms_iou_threshold},
           {"objectness_threshold", c.objectness_threshold},
           {"seed", c.seed}};
}

void from_json(const json& j, DetectorConfig& c) {
  DetectorConfig d;
  for (const auto& [key, _] : j.items()) {
    static const char* known[] = {"input_side", "num_classes", "epochs", "batch_size", "learning_rate", "backbone_id",
                                  "score_threshold", "nms_iou_threshold", "objectness_threshold", "seed"};
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) == std::end(known)) {
      throw ConfigError("unknown detector config key '" + key + "'");
    }
  }
  d.input_side = j.value("input_side", d.input_side);
  d.num_classes = j.value("num_classes", d.num_classes);
  d.epochs = j.value("epochs", d.epochs);
  d.batch_size = j.value("batch_size", d.batch_size);
  d.learning_rate = j.value("learning_rate", d.learning_rate);
  d.backbone_id = j.value("backbone_id", d.backbone_id);
  d.score_threshold = j.value("score_threshold", d.score_threshold);
  d.nms_iou_threshold = j.value("nms_iou_threshold", d.nms_iou_threshold);
  d.objectness_threshold = j.value("objectness_threshold", d.objectness_threshold);
  d.seed = j.value("seed", d.seed);
  c = d;
}

std::vector<std::string> registered_detector_backends() { return {kTinyDetectorBackend, kEfficientDetBackend}; }

std::unique_ptr<DetectorBackend> make_detector_backend(const std::string& id, const DetectorConfig& config) {
  check_device();
  if (id == kTinyDetectorBackend) return std::make_unique<TinyDetectorBackend>(config.input_side);
  if (id == kEfficientDetBackend) {
    throw CapabilityError("detector backend '" + id +
                          "' needs an EfficientDet runtime with pretrained EfficientNetV2 weights, which this build "
                          "does not include; set detector.backbone_id=tiny_cnn for the reference backend");
  }
  throw ConfigError("unknown detector backend '" + id + "'");
}

DetectorModel::DetectorModel(DetectorConfig config, std::unique_ptr<DetectorBackend> backend, TrainingLog log)
    : config_(std::move(config)), backend_(std::move(backend)), log_(std::move(log)), categories_(canonical_categories()) {
  if (!backend_) throw ContractError("detector model needs a backend");
}

DetectorModel::DetectorModel(const DetectorModel& other)
    : config_(other.config_), backend_(other.backend_->clone()), log_(other.log_), categories_(other.categories_) {}

DetectorModel& DetectorModel::operator=(const DetectorModel& other) {
  if (this != &other) *this = DetectorModel(other);
  return *this;
}

void DetectorModel::save(const fs::path& dir, const json& extra) const {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

  const auto w = backend_->weights();
  {
    std::ofstream out(dir / "weights.bin", std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / "weights.bin").string());
    static_assert(std::endian::native == std::endian::little, "weights are stored little-endian");
    const auto count = static_cast<std::uint64_t>(w.size());
    out.write(kWeightsMagic, sizeof kWeightsMagic);
    out.write(reinterpret_cast<const char*>(&count), sizeof count);
    out.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(float)));
    if (!out) throw IoError("short write on " + (dir / "weights.bin").string());
  }

  json epochs = json::array();
  for (const auto& e : log_.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", nan_to_null(e.val_loss)}});
  }
  json manifest{{"format_version", kCheckpointFormat},
                      {"kind", "detector"},
                      {"backend", backend_->id()},
                      {"config", config_},
                      {"categories", categories_},
                      {"weights_file", "weights.bin"},
                      {"weight_count", w.size()},
                      {"training_log",
                       {{"backend", log_.backend}, {"deterministic", log_.deterministic}, {"epochs", epochs}}}};
  for (const auto& [k, v] : extra.items()) {
    if (!manifest.contains(k)) manifest[k] = v;
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

DetectorModel DetectorModel::load(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("no detector checkpoint at " + dir.string());
  json manifest;
  try {
    in >> manifest;
    if (manifest.at("kind") != "detector") throw SchemaError("checkpoint at " + dir.string() + " is not a detector");
    if (manifest.at("format_version").get<int>() != kCheckpointFormat) {
      throw SchemaError("unsupported detector checkpoint format version");
    }
    const auto config = manifest.at("config").get<DetectorConfig>();
    if (manifest.at("categories").get<std::vector<std::string>>() != canonical_categories()) {
      throw SchemaError("detector checkpoint has a different category map");
    }
    auto backend = make_detector_backend(manifest.at("backend").get<std::string>(), config);

    std::ifstream wf(dir / manifest.at("weights_file").get<std::string>(), std::ios::binary);
    if (!wf) throw IoError("missing weights blob in " + dir.string());
    char magic[sizeof kWeightsMagic];
    std::uint64_t count = 0;
    wf.read(magic, sizeof magic);
    wf.read(reinterpret_cast<char*>(&count), sizeof count);
    if (!wf || std::memcmp(magic, kWeightsMagic, sizeof magic) != 0) throw SchemaError("bad weights blob header");
    if (count != manifest.at("weight_count").get<std::uint64_t>()) throw SchemaError("weights blob size mismatch");
    std::vector<float> w(count);
    wf.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!wf) throw SchemaError("truncated weights blob");
    backend->set_weights(w);

    TrainingLog log;
    const auto& tl = manifest.at("training_log");
    log.backend = tl.at("backend").get<std::string>();
    log.deterministic = tl.at("deterministic").get<bool>();
    for (const auto& e : tl.at("epochs")) {
      log.epochs.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(), null_to_nan(e.at("val_loss"))});
    }
    return DetectorModel(config, std::move(backend), std::move(log));
  } catch (const json::exception& e) {
    throw SchemaError("malformed detector manifest in " + dir.string() + ": " + e.what());
  }
}

DetectorModel train_detector(std::size_t train_count, const ImageLoader& train, std::size_t val_count,
                             const ImageLoader& val, const DetectorConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train_count == 0) throw ConfigError("detector training set is empty");
  auto backend = make_detector_backend(config.backbone_id, config);

  auto encode = [&](std::size_t count, const ImageLoader& load) {
    std::vector<PreparedSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      auto input = preprocess_for_detector(load(i), config.input_side);
      out.push_back({backend->prepare(input.image), std::move(input.annotations)});
    }
    return out;
  };
  const auto train_samples = encode(train_count, train);
  const auto val_samples = encode(val_count, val);
  auto log = backend->fit(train_samples, val_samples, config, on_epoch);
  return DetectorModel(config, std::move(backend), std::move(log));
}

DetectorModel train_detector(std::span<const AnnotatedImage> train, std::span<const AnnotatedImage> val,
                             const DetectorConfig& config, const EpochCallback& on_epoch) {
  return train_detector(
      train.size(), [&](std::size_t i) { return train[i]; }, val.size(), [&](std::size_t i) { return val[i]; },
      config, on_epoch);
}

std::vector<Detection> nms(std::span<const Detection> candidates, double iou_threshold) {
  std::vector<Detection> kept;
  for (const auto& c : candidates) {
    const bool suppressed =
        std::any_of(kept.begin(), kept.end(), [&](const Detection& k) { return iou(k.box, c.box) > iou_threshold; });
    if (!suppressed) kept.push_back(c);
  }
  return kept;
}

std::vector<Detection> detect(const DetectorModel& model, const cv::Mat& rgb) {
  const auto& config = model.config();
  const NormalizedImage frame = normalize_square(rgb, config.input_side);
  const auto prepared = model.backend().prepare(frame);
  const auto candidates = model.backend().propose(prepared, config);

  std::vector<Detection> dets;
  for (const auto& c : candidates) {
    const double confidence = c.scores.max();
    if (confidence < config.score_threshold) continue;
    const auto box = clamp_to_image(to_source_frame(c.box, frame), rgb.cols, rgb.rows);
    if (!box) continue;
    dets.push_back({*box, c.scores, confidence, c.box});
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
  return nms(dets, config.nms_iou_threshold);
}

json detections_to_json(const std::string& image_id, std::span<const Detection> detections) {
  json list = json::array();
  for (const auto& d : detections) {
    list.push_back({{"bbox", {d.box.xmin, d.box.ymin, d.box.xmax, d.box.ymax}},
                    {"scores", d.scores.values()},
                    {"confidence", d.confidence}});
  }
  return {{"image_id", image_id}, {"detections", list}};
}

}  // namespace ovadet
