#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "json.hpp"
#include "ovadet/dataset.hpp"
#include "ovadet/detector.hpp"
#include "ovadet/svm.hpp"

namespace ovadet {

struct PathsConfig {
  std::string dataset_root = "data";
  std::string annotations = "data/annotations.json";
  std::string output_dir = "out";
  std::string checkpoints = "out/checkpoints";

  friend bool operator==(const PathsConfig&, const PathsConfig&) = default;
};

struct EvalConfig {
  double iou_threshold = 0.5;
  std::size_t bins = 20;
  /// "matched": histograms over matched boxes; "all": every prediction, with its best IOU.
  std::string histogram = "matched";

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

/// Every knob of a run in one place. `seed` drives the split, detector initialisation and
/// batch order; the nested configs' own seed fields are overwritten from it.
struct RunConfig {
  PathsConfig paths;
  SplitSpec split;
  DetectorConfig detector;
  SvmConfig svm;
  EvalConfig evaluation;
  std::uint64_t seed = 0;

  void validate() const;
  SplitSpec split_spec() const;
  DetectorConfig detector_config() const;

  friend bool operator==(const RunConfig& a, const RunConfig& b);
};

nlohmann::json to_json(const RunConfig& c);
/// Strict: unknown keys throw ConfigError. Missing keys take defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Apply `dotted.key=value` to a config document. The value is parsed as JSON when possible and
/// taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// 16 hex digits (FNV-1a 64) over the canonical JSON serialization.
std::string config_hash(const RunConfig& c);

}  // namespace ovadet
