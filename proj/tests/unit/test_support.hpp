#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "ovadet/detector.hpp"
#include "ovadet/svm.hpp"
#include "ovadet/synth.hpp"

namespace ovadet::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("ovadet_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

inline SynthConfig small_synth(int per_class = 10) {
  SynthConfig c;
  c.per_class_count = per_class;
  c.image_size = 128;
  return c;
}

inline DetectorConfig tiny_detector_config(int epochs = 12) {
  DetectorConfig c;
  c.backbone_id = kTinyDetectorBackend;
  c.epochs = epochs;
  c.learning_rate = 0.002;
  c.seed = 3;
  return c;
}

inline SvmConfig tiny_svm_config() {
  SvmConfig c;
  c.extractor_id = kTinyExtractor;
  return c;
}

}  // namespace ovadet::test
