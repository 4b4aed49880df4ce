#include "ovadet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_map>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ovadet/errors.hpp"
#include "ovadet/random.hpp"

namespace ovadet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string id_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw SchemaError("image id must be a string or integer");
}

const json& require(const json& obj, const char* key, const char* where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw SchemaError(std::string(where) + ": missing field '" + key + "'");
  }
  return obj.at(key);
}

}  // namespace

AnnotationFile parse_annotations(const json& doc) {
  if (!doc.is_object()) throw SchemaError("annotation file: top level must be an object");
  for (const char* key : {"images", "annotations", "categories"}) {
    if (!doc.contains(key) || !doc.at(key).is_array()) {
      throw SchemaError(std::string("annotation file: '") + key + "' must be an array");
    }
  }

  std::unordered_map<long long, CategoryId> category_map;
  for (const auto& c : doc.at("categories")) {
    const auto name = require(c, "name", "category").get<std::string>();
    const auto id = require(c, "id", "category").get<long long>();
    const auto cat = category_from_name(name);
    if (!cat) throw SchemaError("unknown category name: '" + name + "'");
    category_map.emplace(id, *cat);
  }

  AnnotationFile out;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& img : doc.at("images")) {
    ImageRecord rec;
    rec.image_id = id_string(require(img, "id", "image"));
    rec.file_name = require(img, "file_name", "image").get<std::string>();
    rec.width = img.value("width", 0);
    rec.height = img.value("height", 0);
    if (!index.emplace(rec.image_id, out.images.size()).second) {
      throw SchemaError("duplicate image id: " + rec.image_id);
    }
    out.images.push_back(std::move(rec));
  }

  std::size_t n = 0;
  for (const auto& a : doc.at("annotations")) {
    ++n;
    const auto image_id = id_string(require(a, "image_id", "annotation"));
    const auto it = index.find(image_id);
    if (it == index.end()) throw SchemaError("annotation references unknown image id " + image_id);
    const auto cat_id = require(a, "category_id", "annotation").get<long long>();
    const auto cat = category_map.find(cat_id);
    if (cat == category_map.end()) {
      throw SchemaError("annotation uses undeclared category id " + std::to_string(cat_id));
    }
    const auto& bbox = require(a, "bbox", "annotation");
    if (!bbox.is_array() || bbox.size() != 4) {
      throw SchemaError("annotation bbox must be [x, y, w, h]");
    }
    const auto box = BoundingBox::from_xywh(bbox[0].get<double>(), bbox[1].get<double>(),
                                            bbox[2].get<double>(), bbox[3].get<double>());
    auto& rec = out.images[it->second];
    if (!box.valid() || !std::isfinite(box.area())) {
      out.warnings.push_back("annotation #" + std::to_string(n) + " on image " + image_id +
                             ": degenerate box rejected");
      continue;
    }
    if (rec.width > 0 && rec.height > 0 && !clamp_to_image(box, rec.width, rec.height)) {
      out.warnings.push_back("annotation #" + std::to_string(n) + " on image " + image_id +
                             ": box lies outside the image, rejected");
      continue;
    }
    rec.annotations.push_back({box, cat->second});
  }
  return out;
}

AnnotationFile read_annotations(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotation file " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw SchemaError("annotation file " + path.string() + " is not valid JSON: " + e.what());
  }
  try {
    return parse_annotations(doc);
  } catch (const json::exception& e) {
    throw SchemaError("annotation file " + path.string() + ": " + e.what());
  }
}

json to_annotation_json(std::span<const ImageRecord> records) {
  json images = json::array();
  json annotations = json::array();
  json categories = json::array();
  for (int i = 0; i < kNumClasses; ++i) {
    categories.push_back({{"id", i}, {"name", std::string(category_names()[static_cast<std::size_t>(i)])}});
  }
  long long next_ann = 1;
  for (const auto& rec : records) {
    images.push_back({{"id", rec.image_id},
                      {"file_name", rec.file_name},
                      {"width", rec.width},
                      {"height", rec.height}});
    for (const auto& a : rec.annotations) {
      annotations.push_back({{"id", next_ann++},
                             {"image_id", rec.image_id},
                             {"bbox", {a.box.xmin, a.box.ymin, a.box.width(), a.box.height()}},
                             {"category_id", a.category.value()}});
    }
  }
  return {{"images", images}, {"annotations", annotations}, {"categories", categories}};
}

cv::Mat read_rgb_image(const fs::path& path, std::vector<std::string>* warnings) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw IoError("cannot decode image " + path.string());
  if (raw.depth() != CV_8U) {
    raw.convertTo(raw, CV_8U, raw.depth() == CV_16U ? 1.0 / 257.0 : 1.0);
  }
  cv::Mat rgb;
  switch (raw.channels()) {
    case 1:
      cv::cvtColor(raw, rgb, cv::COLOR_GRAY2RGB);
      if (warnings) warnings->push_back(path.filename().string() + ": grayscale replicated to 3 channels");
      break;
    case 3:
      cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
      break;
    case 4:
      cv::cvtColor(raw, rgb, cv::COLOR_BGRA2RGB);
      if (warnings) warnings->push_back(path.filename().string() + ": alpha channel dropped");
      break;
    default:
      throw IoError("unsupported channel count in " + path.string());
  }
  return rgb;
}

void write_rgb_image(const fs::path& path, const cv::Mat& rgb) {
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write image " + path.string());
}

LoadedDataset load_dataset(const fs::path& root, const fs::path& annotation_path) {
  auto file = read_annotations(annotation_path);
  LoadedDataset out;
  out.warnings = std::move(file.warnings);
  for (auto& rec : file.images) {
    const fs::path path = root / rec.file_name;
    cv::Mat pixels;
    try {
      pixels = read_rgb_image(path, &out.warnings);
    } catch (const IoError& e) {
      out.errors.push_back("image " + rec.image_id + ": " + e.what());
      continue;
    }
    if ((rec.width > 0 && rec.width != pixels.cols) || (rec.height > 0 && rec.height != pixels.rows)) {
      out.warnings.push_back("image " + rec.image_id + ": declared size differs from file");
    }
    for (const auto& a : rec.annotations) ++out.per_category[static_cast<std::size_t>(a.category.value())];
    out.images.push_back({rec.image_id, std::move(pixels), std::move(rec.annotations)});
  }
  return out;
}

void write_dataset(const fs::path& root, std::span<const AnnotatedImage> images) {
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  if (ec) throw IoError("cannot create " + (root / "images").string() + ": " + ec.message());
  std::vector<ImageRecord> records;
  records.reserve(images.size());
  for (const auto& img : images) {
    const std::string file_name = "images/" + img.image_id + ".png";
    write_rgb_image(root / file_name, img.pixels);
    records.push_back({img.image_id, file_name, img.width(), img.height(), img.annotations});
  }
  std::ofstream out(root / "annotations.json");
  if (!out) throw IoError("cannot write " + (root / "annotations.json").string());
  out << to_annotation_json(records).dump(1) << '\n';
}

void SplitSpec::validate() const {
  for (double f : {train_frac, val_frac, test_frac}) {
    if (!(f >= 0.0) || !std::isfinite(f)) throw ConfigError("split fractions must be >= 0");
  }
  const double sum = train_frac + val_frac + test_frac;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1, got " + std::to_string(sum));
  }
}

int stratum_of(std::span<const Annotation> annotations) noexcept {
  return annotations.empty() ? -1 : annotations.front().category.value();
}

SplitIndices split_indices(std::span<const int> strata, const SplitSpec& spec) {
  spec.validate();
  if (strata.empty()) throw ContractError("cannot split an empty dataset");

  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < strata.size(); ++i) groups[strata[i]].push_back(i);

  // Guards against products like 70 * (1/7) landing just below an integer.
  constexpr double kFloorSlack = 1e-9;
  Rng rng(spec.seed);
  SplitIndices out;
  for (auto& [stratum, members] : groups) {
    rng.shuffle(members);
    const auto n = static_cast<double>(members.size());
    const auto n_val = static_cast<std::size_t>(std::floor(n * spec.val_frac + kFloorSlack));
    const auto n_test = static_cast<std::size_t>(std::floor(n * spec.test_frac + kFloorSlack));
    const std::size_t n_train = members.size() - n_val - n_test;
    auto it = members.begin();
    out.train.insert(out.train.end(), it, it + static_cast<std::ptrdiff_t>(n_train));
    it += static_cast<std::ptrdiff_t>(n_train);
    out.val.insert(out.val.end(), it, it + static_cast<std::ptrdiff_t>(n_val));
    it += static_cast<std::ptrdiff_t>(n_val);
    out.test.insert(out.test.end(), it, members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

namespace {

template <typename T>
Splits<T> split_items(std::span<const T> dataset, const SplitSpec& spec) {
  std::vector<int> strata;
  strata.reserve(dataset.size());
  for (const auto& item : dataset) strata.push_back(stratum_of(item.annotations));
  const auto idx = split_indices(strata, spec);
  Splits<T> out;
  for (auto i : idx.train) out.train.push_back(dataset[i]);
  for (auto i : idx.val) out.val.push_back(dataset[i]);
  for (auto i : idx.test) out.test.push_back(dataset[i]);
  return out;
}

}  // namespace

Splits<AnnotatedImage> split_dataset(std::span<const AnnotatedImage> dataset, const SplitSpec& spec) {
  return split_items(dataset, spec);
}

Splits<ImageRecord> split_dataset(std::span<const ImageRecord> dataset, const SplitSpec& spec) {
  return split_items(dataset, spec);
}

}  // namespace ovadet
