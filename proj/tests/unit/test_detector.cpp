#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>

#include "ovadet/detector.hpp"
#include "ovadet/errors.hpp"
#include "ovadet/nn.hpp"
#include "ovadet/random.hpp"
#include "ovadet/synth.hpp"
#include "test_support.hpp"
#include "tiny_detector.hpp"

using namespace ovadet;

namespace {

nn::Tensor random_tensor(int c, int h, int w, Rng& rng) {
  nn::Tensor t(c, h, w);
  for (float& v : t.data) v = static_cast<float>(rng.normal());
  return t;
}

double dot(const nn::Tensor& a, const nn::Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += static_cast<double>(a.data[i]) * b.data[i];
  return s;
}

Detection det(BoundingBox box, double confidence) {
  Detection d;
  d.box = box;
  d.confidence = confidence;
  return d;
}

/// Model trained once and shared by the slower tests below.
const DetectorModel& trained_model() {
  static const DetectorModel model = [] {
    const auto images = synth_generate(test::small_synth(10), 21);
    return train_detector(images, {}, test::tiny_detector_config(12));
  }();
  return model;
}

}  // namespace

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  for (int k : {1, 3}) {
    nn::Conv2d conv(3, 4, k);
    conv.init(rng);
    for (float& b : conv.bias.value) b = static_cast<float>(rng.normal() * 0.1);
    nn::Tensor x = random_tensor(3, 6, 5, rng);
    const nn::Tensor r = random_tensor(4, 6, 5, rng);
    std::vector<float> col;
    conv.forward(x, &col);
    const nn::Tensor dx = conv.backward(r, col, 6, 5);

    auto loss = [&] { return dot(conv.forward(x), r); };
    const float eps = 1e-2f;
    for (std::size_t i = 0; i < conv.weight.value.size(); i += 7) {
      const float keep = conv.weight.value[i];
      conv.weight.value[i] = keep + eps;
      const double up = loss();
      conv.weight.value[i] = keep - eps;
      const double down = loss();
      conv.weight.value[i] = keep;
      EXPECT_NEAR(conv.weight.grad[i], (up - down) / (2 * eps), 2e-2) << "k=" << k << " w" << i;
    }
    for (std::size_t i = 0; i < x.data.size(); i += 5) {
      const float keep = x.data[i];
      x.data[i] = keep + eps;
      const double up = loss();
      x.data[i] = keep - eps;
      const double down = loss();
      x.data[i] = keep;
      EXPECT_NEAR(dx.data[i], (up - down) / (2 * eps), 2e-2) << "k=" << k << " x" << i;
    }
    for (std::size_t o = 0; o < 4; ++o) {
      double expected = 0.0;
      for (std::size_t p = 0; p < 30; ++p) expected += r.data[o * 30 + p];
      EXPECT_NEAR(conv.bias.grad[o], expected, 1e-4);
    }
  }
}

TEST(MaxPool, BackwardRoutesToArgmax) {
  nn::Tensor x(1, 2, 2);
  x.data = {1.0f, 4.0f, 3.0f, 2.0f};
  std::vector<std::uint32_t> arg;
  const nn::Tensor y = nn::maxpool2(x, &arg);
  ASSERT_EQ(y.data.size(), 1u);
  EXPECT_EQ(y.data[0], 4.0f);
  nn::Tensor dy(1, 1, 1);
  dy.data[0] = 2.5f;
  const nn::Tensor dx = nn::maxpool2_backward(dy, arg, 1, 2, 2);
  EXPECT_EQ(dx.data, (std::vector<float>{0.0f, 2.5f, 0.0f, 0.0f}));
}

TEST(TinyDetector, LossGradientMatchesFiniteDifferences) {
  TinyDetectorBackend backend(512);
  Rng rng(11);
  std::vector<float> w = backend.weights();
  for (float& v : w) v = static_cast<float>(rng.normal() * 0.05);
  backend.set_weights(w);

  const auto img = synth_generate(test::small_synth(1), 2)[3];
  const auto in = preprocess_for_detector(img);
  const PreparedSample sample{backend.prepare(in.image), in.annotations};

  for (auto* p : backend.params()) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
  backend.sample_loss(sample, true);
  // Head parameters: the loss is smooth there, so central differences are reliable.
  auto params = backend.params();
  nn::Param& head_w = *params[params.size() - 2];
  nn::Param& head_b = *params.back();
  const float eps = 1e-3f;
  int checked = 0;
  for (nn::Param* p : {&head_b, &head_w}) {
    for (std::size_t i = 0; i < p->value.size(); i += (p == &head_b ? 1 : 97)) {
      const float keep = p->value[i];
      p->value[i] = keep + eps;
      const double up = backend.sample_loss(sample, false);
      p->value[i] = keep - eps;
      const double down = backend.sample_loss(sample, false);
      p->value[i] = keep;
      const double fd = (up - down) / (2 * eps);
      EXPECT_NEAR(p->grad[i], fd, 2e-3 + 2e-2 * std::abs(fd)) << "index " << i;
      ++checked;
    }
  }
  EXPECT_GT(checked, 20);
}

TEST(DetectorConfig, Validation) {
  auto c = test::tiny_detector_config();
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = test::tiny_detector_config();
  c.nms_iou_threshold = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = test::tiny_detector_config();
  c.input_side = 500;
  EXPECT_THROW(make_detector_backend(kTinyDetectorBackend, c), ConfigError);
}

TEST(DetectorConfig, JsonRoundTripAndStrictKeys) {
  auto c = test::tiny_detector_config();
  c.score_threshold = 0.25;
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<DetectorConfig>(), c);
  nlohmann::json bad = j;
  bad["learnig_rate"] = 1.0;
  EXPECT_THROW(bad.get<DetectorConfig>(), ConfigError);
}

TEST(DetectorBackends, EfficientDetIsRegisteredButUnavailable) {
  const auto ids = registered_detector_backends();
  EXPECT_NE(std::find(ids.begin(), ids.end(), kEfficientDetBackend), ids.end());
  DetectorConfig c;
  EXPECT_THROW(make_detector_backend(kEfficientDetBackend, c), CapabilityError);
  EXPECT_THROW(make_detector_backend("yolo_v9", c), ConfigError);
}

TEST(DetectorBackends, NonCpuDeviceIsCapabilityError) {
  ::setenv("OVADET_DEVICE", "cuda:0", 1);
  EXPECT_THROW(make_detector_backend(kTinyDetectorBackend, test::tiny_detector_config()), CapabilityError);
  ::setenv("OVADET_DEVICE", "cpu", 1);
  EXPECT_NO_THROW(make_detector_backend(kTinyDetectorBackend, test::tiny_detector_config()));
  ::unsetenv("OVADET_DEVICE");
}

TEST(Nms, SingleCandidateUnchanged) {
  const std::vector<Detection> c{det({0, 0, 10, 10}, 0.7)};
  const auto kept = nms(c, 0.5);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].box, c[0].box);
}

TEST(Nms, DisjointBoxesSurviveAnyThreshold) {
  const std::vector<Detection> c{det({0, 0, 10, 10}, 0.9), det({20, 20, 30, 30}, 0.8)};
  for (double t : {0.0, 0.3, 1.0}) EXPECT_EQ(nms(c, t).size(), 2u);
}

TEST(Nms, DuplicateAtIou09Suppressed) {
  // 10x10 boxes shifted by 0.5: IOU = 95/105 ~ 0.905
  const std::vector<Detection> c{det({0, 0, 10, 10}, 0.9), det({0.5, 0, 10.5, 10}, 0.8)};
  ASSERT_GT(iou(c[0].box, c[1].box), 0.9);
  const auto kept = nms(c, 0.5);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_DOUBLE_EQ(kept[0].confidence, 0.9);
}

TEST(Nms, HandExecutedGreedyExample) {
  // A,B overlap strongly; C touches both only slightly.
  const Detection a = det({0, 0, 10, 10}, 0.9);
  const Detection b = det({1, 0, 11, 10}, 0.8);
  const Detection c = det({8, 0, 18, 10}, 0.7);
  ASSERT_NEAR(iou(a.box, b.box), 90.0 / 110.0, 1e-12);
  ASSERT_LT(iou(a.box, c.box), 0.2);
  ASSERT_LT(iou(b.box, c.box), 0.5);
  const std::vector<Detection> cand{a, b, c};
  const auto kept = nms(cand, 0.5);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].box, a.box);
  EXPECT_EQ(kept[1].box, c.box);
}

TEST(Nms, Idempotent) {
  Rng rng(3);
  std::vector<Detection> cand;
  for (int i = 0; i < 40; ++i) {
    const double x = rng.uniform(0, 80), y = rng.uniform(0, 80);
    cand.push_back(det({x, y, x + rng.uniform(5, 30), y + rng.uniform(5, 30)}, 1.0 - i / 50.0));
  }
  const auto once = nms(cand, 0.4);
  const auto twice = nms(once, 0.4);
  ASSERT_EQ(once.size(), twice.size());
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(once[i].box, twice[i].box);
  for (std::size_t i = 0; i < once.size(); ++i) {
    for (std::size_t j = i + 1; j < once.size(); ++j) EXPECT_LE(iou(once[i].box, once[j].box), 0.4);
  }
}

TEST(TrainDetector, EmptyTrainingSetRejected) {
  EXPECT_THROW(train_detector({}, {}, test::tiny_detector_config()), ConfigError);
}

TEST(TrainDetector, LossDecreases) {
  const auto& log = trained_model().training_log();
  ASSERT_EQ(log.epochs.size(), 12u);
  EXPECT_LT(log.epochs.back().train_loss, log.epochs.front().train_loss);
  EXPECT_TRUE(std::isnan(log.epochs.front().val_loss));
}

TEST(TrainDetector, SameSeedSameLossSequence) {
  const auto images = synth_generate(test::small_synth(2), 4);
  const auto cfg = test::tiny_detector_config(3);
  const auto a = train_detector(images, images, cfg);
  const auto b = train_detector(images, images, cfg);
  ASSERT_EQ(a.training_log().epochs.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a.training_log().epochs[i].train_loss, b.training_log().epochs[i].train_loss);
    EXPECT_EQ(a.training_log().epochs[i].val_loss, b.training_log().epochs[i].val_loss);
  }
  EXPECT_EQ(a.backend().weights(), b.backend().weights());
}

TEST(Detect, OutputsAreSortedThresholdedAndOnSimplex) {
  const auto& model = trained_model();
  const auto images = synth_generate(test::small_synth(2), 99);
  std::size_t hits = 0;
  for (const auto& img : images) {
    const auto dets = detect(model, img);
    for (std::size_t i = 0; i < dets.size(); ++i) {
      EXPECT_TRUE(ClassScores::is_simplex(dets[i].scores.values()));
      EXPECT_DOUBLE_EQ(dets[i].confidence, dets[i].scores.max());
      EXPECT_GE(dets[i].confidence, model.config().score_threshold);
      if (i > 0) EXPECT_GE(dets[i - 1].confidence, dets[i].confidence);
      EXPECT_GE(dets[i].box.xmin, 0.0);
      EXPECT_LE(dets[i].box.xmax, img.width());
    }
    if (!dets.empty() && iou(dets[0].box, img.annotations[0].box) >= 0.5) ++hits;
  }
  // Short training on 110 images: expect most held-out eggs to be found.
  EXPECT_GE(hits, images.size() / 2);
}

TEST(Detect, BlankImageIsLegal) {
  const cv::Mat blank(128, 128, CV_8UC3, cv::Scalar(214, 206, 188));
  EXPECT_NO_THROW(detect(trained_model(), blank));
}

TEST(DetectorModel, SaveLoadGivesIdenticalDetections) {
  test::TempDir dir;
  const auto& model = trained_model();
  model.save(dir.path(), {{"note", "unit"}});
  const auto loaded = DetectorModel::load(dir.path());
  EXPECT_EQ(loaded.config(), model.config());
  EXPECT_EQ(loaded.training_log().epochs.size(), model.training_log().epochs.size());
  for (const auto& img : synth_generate(test::small_synth(1), 8)) {
    const auto a = detect(model, img);
    const auto b = detect(loaded, img);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].box, b[i].box);
      EXPECT_EQ(a[i].scores, b[i].scores);
    }
  }
}

TEST(DetectorModel, CorruptWeightsRejected) {
  test::TempDir dir;
  trained_model().save(dir.path());
  std::filesystem::resize_file(dir.path() / "weights.bin", 100);
  EXPECT_THROW(DetectorModel::load(dir.path()), Error);
}
