#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "ovadet/config.hpp"
#include "ovadet/evaluation.hpp"
#include "ovadet/fusion.hpp"
#include "ovadet/synth.hpp"

// Operator commands behind the `ovadet` executable. Each throws on failure; the executable maps
// ConfigError/SchemaError/ItemizedError to exit code 2 and everything else to 1.
namespace ovadet::cli {

inline constexpr int kArtifactFormat = 1;

struct Layout {
  std::filesystem::path splits;
  std::filesystem::path logs;
  std::filesystem::path detector_checkpoint;
  std::filesystem::path svm_model;
  std::filesystem::path predictions;
  std::filesystem::path evaluation;

  static Layout of(const RunConfig& config);
};

/// Render the synthetic dataset into `out_dir` (images/ + annotations.json).
void cmd_synth(const SynthConfig& synth, std::uint64_t seed, const std::filesystem::path& out_dir);

struct SplitSummary {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};
/// Writes splits/{train,val,test}.json manifests of image ids.
SplitSummary cmd_split(const RunConfig& config);

enum class Stage { kDetector, kSvm, kAll };
Stage parse_stage(const std::string& s);
void cmd_train(const RunConfig& config, Stage stage);

struct PredictOptions {
  std::optional<std::filesystem::path> input;  // image file or directory
  std::optional<std::string> split;            // or: a split manifest name
  std::optional<std::filesystem::path> out;
};
/// Returns what was written; per-file failures are recorded in `errors`, not thrown.
PredictionSet cmd_predict(const RunConfig& config, const PredictOptions& opts);

struct EvaluateOptions {
  std::optional<std::filesystem::path> predictions;
  std::optional<std::filesystem::path> ground_truth;
  std::optional<std::string> split;
  std::optional<std::filesystem::path> out_dir;
};
EvaluationReport cmd_evaluate(const RunConfig& config, const EvaluateOptions& opts);

/// Image ids of a split manifest written by cmd_split.
std::vector<std::string> read_manifest(const std::filesystem::path& path);

}  // namespace ovadet::cli
