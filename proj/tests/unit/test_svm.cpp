#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "ovadet/errors.hpp"
#include "ovadet/features.hpp"
#include "ovadet/random.hpp"
#include "ovadet/svm.hpp"
#include "ovadet/synth.hpp"
#include "test_support.hpp"

using namespace ovadet;

namespace {

/// `per_class` points around a class-specific centre in a few leading dimensions.
struct Clusters {
  std::vector<FeatureVector> x;
  std::vector<CategoryId> y;
};

Clusters clusters(const std::vector<int>& classes, int per_class, double spread, std::uint64_t seed) {
  Rng rng(seed);
  Clusters out;
  for (int i = 0; i < per_class; ++i) {
    for (int c : classes) {
      std::vector<float> v(kFeatureDim);
      for (auto& f : v) f = static_cast<float>(rng.normal() * spread);
      v[static_cast<std::size_t>(c) * 3] += 4.0f;
      v[static_cast<std::size_t>(c) * 3 + 1] += 2.0f;
      out.x.emplace_back(std::move(v));
      out.y.emplace_back(c);
    }
  }
  return out;
}

SvmConfig linear_config() {
  SvmConfig c = test::tiny_svm_config();
  c.kernel = "linear";
  return c;
}

}  // namespace

TEST(Features, TinyExtractorShapeAndDeterminism) {
  const auto ex = make_feature_extractor(kTinyExtractor, 0);
  const auto img = synth_generate(test::small_synth(1), 3)[0];
  const auto crop = preprocess_for_classifier(crop_box(img, img.annotations[0].box));
  const auto a = extract_features(*ex, crop);
  const auto b = extract_features(*ex, crop);
  EXPECT_EQ(a.size(), 2560u);
  EXPECT_TRUE(a.finite());
  EXPECT_EQ(a, b);
}

TEST(Features, OnePixelChangeMovesTheVector) {
  const auto ex = make_feature_extractor(kTinyExtractor, 0);
  cv::Mat crop(600, 600, CV_8UC3, cv::Scalar(120, 100, 90));
  const auto a = extract_features(*ex, preprocess_for_classifier(crop));
  crop.at<cv::Vec3b>(300, 300) = cv::Vec3b(255, 0, 0);
  const auto b = extract_features(*ex, preprocess_for_classifier(crop));
  EXPECT_NE(a, b);
}

TEST(Features, WrongSideAndUnavailableBackbone) {
  const auto ex = make_feature_extractor(kTinyExtractor, 0);
  const auto small = preprocess_for_classifier(cv::Mat(10, 10, CV_8UC3, cv::Scalar::all(0)), 512);
  EXPECT_THROW(extract_features(*ex, small), ContractError);
  EXPECT_THROW(make_feature_extractor(kEfficientNetExtractor, 0), CapabilityError);
  EXPECT_THROW(make_feature_extractor("resnet", 0), ConfigError);
  EXPECT_THROW(FeatureVector(std::vector<float>(10)), ContractError);
}

TEST(Features, CacheRoundTrip) {
  test::TempDir dir;
  FeatureCache cache;
  const auto key = FeatureCache::key("img7", {1, 2, 3, 4});
  EXPECT_NE(key, FeatureCache::key("img7", {1, 2, 3, 5}));
  std::vector<float> v(kFeatureDim, 0.5f);
  v[9] = -2.0f;
  cache.insert(key, FeatureVector(v));
  cache.save(dir / "cache.bin");
  const auto loaded = FeatureCache::load(dir / "cache.bin");
  ASSERT_NE(loaded.find(key), nullptr);
  EXPECT_EQ(*loaded.find(key), FeatureVector(v));
  EXPECT_EQ(loaded.find("nope"), nullptr);
}

TEST(Svm, SeparableClustersReachFullHoldoutAccuracy) {
  const std::vector<int> classes{0, 3, 7};
  const auto train = clusters(classes, 20, 0.3, 1);
  const auto hold = clusters(classes, 10, 0.3, 2);
  for (const auto& cfg : {test::tiny_svm_config(), linear_config()}) {
    const auto model = train_svm(train.x, train.y, cfg, hold.x, hold.y);
    EXPECT_DOUBLE_EQ(model.holdout_accuracy(), 1.0) << cfg.kernel;
    EXPECT_EQ(model.calibration_source(), "holdout");
    for (std::size_t i = 0; i < hold.x.size(); ++i) {
      const auto s = classify(model, hold.x[i]);
      EXPECT_EQ(s.argmax(), hold.y[i]);
      EXPECT_EQ(s[1], 0.0);  // never-seen class
    }
  }
}

TEST(Svm, TrainingExemplarKeepsItsLabel) {
  const auto train = clusters({1, 2, 5, 9}, 15, 0.3, 4);
  const auto model = train_svm(train.x, train.y, test::tiny_svm_config());
  for (std::size_t i = 0; i < train.x.size(); i += 5) EXPECT_EQ(classify(model, train.x[i]).argmax(), train.y[i]);
  EXPECT_EQ(model.calibration_source(), "training");
  EXPECT_TRUE(std::isnan(model.holdout_accuracy()));
}

TEST(Svm, ScoresAlwaysOnSimplex) {
  const auto train = clusters({0, 4, 8, 10}, 10, 0.5, 5);
  const auto model = train_svm(train.x, train.y, test::tiny_svm_config());
  Rng rng(6);
  for (int t = 0; t < 1000; ++t) {
    std::vector<float> v(kFeatureDim);
    const double scale = std::pow(10.0, rng.uniform(-3, 2));
    for (auto& f : v) f = static_cast<float>(rng.normal() * scale);
    const auto s = classify(model, FeatureVector(v));
    ASSERT_TRUE(ClassScores::is_simplex(s.values())) << t;
  }
}

TEST(Svm, RelabelingPermutesPredictions) {
  const auto data = clusters({0, 1, 2}, 12, 0.8, 7);
  const auto probe = clusters({0, 1, 2}, 5, 1.5, 8);
  const int perm[kNumClasses] = {6, 2, 9, 0, 1, 3, 4, 5, 7, 8, 10};
  std::vector<CategoryId> relabeled;
  for (auto c : data.y) relabeled.emplace_back(perm[c.value()]);
  const auto a = train_svm(data.x, data.y, test::tiny_svm_config());
  const auto b = train_svm(data.x, relabeled, test::tiny_svm_config());
  for (const auto& x : probe.x) {
    const auto sa = classify(a, x);
    const auto sb = classify(b, x);
    EXPECT_EQ(perm[sa.argmax().value()], sb.argmax().value());
    for (int k : {0, 1, 2}) EXPECT_NEAR(sa[k], sb[perm[k]], 1e-9);
  }
}

TEST(Svm, ReloadGivesIdenticalScores) {
  test::TempDir dir;
  const auto data = clusters({3, 4, 6}, 10, 0.6, 9);
  const auto model = train_svm(data.x, data.y, test::tiny_svm_config(), data.x, data.y);
  model.save(dir / "svm.bin", {{"config_hash", "abc"}});
  const auto loaded = SvmModel::load(dir / "svm.bin");
  EXPECT_EQ(loaded.support_count(), model.support_count());
  EXPECT_EQ(loaded.gamma(), model.gamma());
  const auto probe = clusters({3, 4, 6}, 3, 2.0, 10);
  for (const auto& x : probe.x) EXPECT_EQ(classify(loaded, x), classify(model, x));
}

TEST(Svm, InputErrors) {
  const auto data = clusters({0, 1}, 5, 0.3, 11);
  auto x = data.x;
  std::vector<float> bad(kFeatureDim, 0.0f);
  bad[17] = std::numeric_limits<float>::quiet_NaN();
  x[4] = FeatureVector(bad);
  try {
    train_svm(x, data.y, test::tiny_svm_config());
    FAIL() << "expected ContractError";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("4"), std::string::npos) << e.what();
  }
  const std::vector<CategoryId> one_class(data.x.size(), CategoryId(2));
  EXPECT_THROW(train_svm(data.x, one_class, test::tiny_svm_config()), ContractError);
  EXPECT_THROW(train_svm(data.x, std::span(data.y).first(3), test::tiny_svm_config()), ContractError);
}

TEST(Svm, ConfigValidation) {
  auto c = test::tiny_svm_config();
  c.C = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = test::tiny_svm_config();
  c.kernel = "poly";
  EXPECT_THROW(c.validate(), ConfigError);
  nlohmann::json j = test::tiny_svm_config();
  EXPECT_EQ(j.get<SvmConfig>(), test::tiny_svm_config());
  j["Cee"] = 1;
  EXPECT_THROW(j.get<SvmConfig>(), ConfigError);
}

TEST(Platt, IncreasingInMarginOnSeparableData) {
  std::vector<double> m;
  std::vector<bool> pos;
  for (int i = -10; i <= 10; ++i) {
    m.push_back(i * 0.3);
    pos.push_back(i > 0);
  }
  const auto [a, b] = fit_platt(m, pos);
  EXPECT_LT(a, 0.0);
  auto p = [&](double f) { return 1.0 / (1.0 + std::exp(a * f + b)); };
  EXPECT_GT(p(2.0), 0.8);
  EXPECT_LT(p(-2.0), 0.2);
}
