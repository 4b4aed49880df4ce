#include "ovadet/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ovadet/errors.hpp"

namespace ovadet {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError("unknown config key '" + where + "." + key + "'");
  }
}

json paths_to_json(const PathsConfig& p) {
  return {{"dataset_root", p.dataset_root},
          {"annotations", p.annotations},
          {"output_dir", p.output_dir},
          {"checkpoints", p.checkpoints}};
}

PathsConfig paths_from_json(const json& j) {
  reject_unknown(j, {"dataset_root", "annotations", "output_dir", "checkpoints"}, "paths");
  PathsConfig p;
  p.dataset_root = j.value("dataset_root", p.dataset_root);
  p.annotations = j.value("annotations", p.annotations);
  p.output_dir = j.value("output_dir", p.output_dir);
  p.checkpoints = j.value("checkpoints", p.checkpoints);
  return p;
}

json split_to_json(const SplitSpec& s) {
  return {{"train_frac", s.train_frac}, {"val_frac", s.val_frac}, {"test_frac", s.test_frac}};
}

SplitSpec split_from_json(const json& j) {
  reject_unknown(j, {"train_frac", "val_frac", "test_frac"}, "split");
  SplitSpec s;
  s.train_frac = j.value("train_frac", s.train_frac);
  s.val_frac = j.value("val_frac", s.val_frac);
  s.test_frac = j.value("test_frac", s.test_frac);
  return s;
}

json eval_to_json(const EvalConfig& e) {
  return {{"iou_threshold", e.iou_threshold}, {"bins", e.bins}, {"histogram", e.histogram}};
}

EvalConfig eval_from_json(const json& j) {
  reject_unknown(j, {"iou_threshold", "bins", "histogram"}, "evaluation");
  EvalConfig e;
  e.iou_threshold = j.value("iou_threshold", e.iou_threshold);
  e.bins = j.value("bins", e.bins);
  e.histogram = j.value("histogram", e.histogram);
  return e;
}

}  // namespace

void RunConfig::validate() const {
  split_spec().validate();
  detector_config().validate();
  svm.validate();
  if (!(evaluation.iou_threshold > 0.0 && evaluation.iou_threshold <= 1.0)) {
    throw ConfigError("evaluation.iou_threshold must lie in (0,1]");
  }
  if (evaluation.bins < 1) throw ConfigError("evaluation.bins must be >= 1");
  if (evaluation.histogram != "matched" && evaluation.histogram != "all") {
    throw ConfigError("evaluation.histogram must be 'matched' or 'all'");
  }
  if (paths.dataset_root.empty() || paths.output_dir.empty() || paths.checkpoints.empty()) {
    throw ConfigError("paths must not be empty");
  }
}

SplitSpec RunConfig::split_spec() const {
  SplitSpec s = split;
  s.seed = seed;
  return s;
}

DetectorConfig RunConfig::detector_config() const {
  DetectorConfig d = detector;
  d.seed = seed;
  return d;
}

bool operator==(const RunConfig& a, const RunConfig& b) {
  return a.paths == b.paths && a.split.train_frac == b.split.train_frac && a.split.val_frac == b.split.val_frac &&
         a.split.test_frac == b.split.test_frac && a.detector_config() == b.detector_config() && a.svm == b.svm &&
         a.evaluation == b.evaluation && a.seed == b.seed;
}

json to_json(const RunConfig& c) {
  json detector = c.detector_config();
  detector.erase("seed");
  return {{"paths", paths_to_json(c.paths)},
          {"split", split_to_json(c.split)},
          {"detector", detector},
          {"svm", json(c.svm)},
          {"evaluation", eval_to_json(c.evaluation)},
          {"seed", c.seed}};
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j, {"paths", "split", "detector", "svm", "evaluation", "seed"}, "config");
  RunConfig c;
  try {
    if (j.contains("paths")) c.paths = paths_from_json(j["paths"]);
    if (j.contains("split")) c.split = split_from_json(j["split"]);
    if (j.contains("detector")) {
      if (j["detector"].contains("seed")) throw ConfigError("detector.seed is derived from the top-level seed");
      c.detector = j["detector"].get<DetectorConfig>();
    }
    if (j.contains("svm")) c.svm = j["svm"].get<SvmConfig>();
    if (j.contains("evaluation")) c.evaluation = eval_from_json(j["evaluation"]);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.split.seed = c.seed;
  c.detector.seed = c.seed;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(doc);
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::stringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) {
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    path.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    json& next = (*node)[path[i]];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    node = &next;
  }
  (*node)[path.back()] = std::move(value);
}

std::string config_hash(const RunConfig& c) {
  const std::string text = to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace ovadet
