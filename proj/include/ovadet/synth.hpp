#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "ovadet/dataset.hpp"

namespace ovadet {

/// Synthetic stand-in dataset: one rendered "egg" per image on a flat, noisy background.
struct SynthConfig {
  int image_size = 128;
  int per_class_count = 10;
  double noise_sigma = 6.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Parse `key = value` lines (keys: image_size, per_class_count, noise_sigma, seed). Blank
/// lines and lines starting with '#' are ignored. Unknown keys throw ConfigError.
SynthConfig parse_synth_config(std::string_view text);
SynthConfig read_synth_config(const std::filesystem::path& path);

/// Deterministic in (config, seed); `config.seed` is ignored in favour of `seed`.
/// Images are interleaved by class: id k has category k % 11.
std::vector<AnnotatedImage> synth_generate(const SynthConfig& config, std::uint64_t seed);

}  // namespace ovadet
