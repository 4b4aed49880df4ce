#pragma once

#include "ovadet/detector.hpp"
#include "ovadet/nn.hpp"

namespace ovadet {

/// Reference detector: the normalized input is average-pooled to 64x64, passed through four
/// 3x3 conv layers (two 2x max pools) and a 1x1 head on a 16x16 grid. Each cell predicts an
/// objectness logit, 11 class logits and a box (centre offset, log size) in cell units.
/// Objectness is trained against a Gaussian heatmap with a penalty-reduced focal loss.
class TinyDetectorBackend final : public DetectorBackend {
 public:
  static constexpr int kPooledSide = 64;
  static constexpr int kGrid = 16;
  static constexpr int kHeadChannels = 1 + kNumClasses + 4;

  explicit TinyDetectorBackend(int input_side);

  std::string id() const override { return kTinyDetectorBackend; }
  bool deterministic() const override { return true; }
  std::vector<float> prepare(const NormalizedImage& image) const override;
  TrainingLog fit(std::span<const PreparedSample> train, std::span<const PreparedSample> val,
                  const DetectorConfig& config, const EpochCallback& on_epoch) override;
  std::vector<Candidate> propose(std::span<const float> prepared, const DetectorConfig& config) const override;

  std::vector<float> weights() const override;
  void set_weights(std::span<const float> weights) override;
  std::unique_ptr<DetectorBackend> clone() const override;

  /// Loss of one sample; when `accumulate` is set, parameter gradients are added in place.
  double sample_loss(const PreparedSample& sample, bool accumulate);

  std::vector<nn::Param*> params();
  std::vector<const nn::Param*> params() const;

 private:
  struct Activations;
  nn::Tensor forward(std::span<const float> prepared, Activations* keep) const;
  double cell_size() const { return static_cast<double>(input_side_) / kGrid; }

  int input_side_;
  nn::Conv2d conv1_{3, 16, 3};
  nn::Conv2d conv2_{16, 32, 3};
  nn::Conv2d conv3_{32, 64, 3};
  nn::Conv2d conv4_{64, 64, 3};
  nn::Conv2d head_{64, kHeadChannels, 1};
};

}  // namespace ovadet
