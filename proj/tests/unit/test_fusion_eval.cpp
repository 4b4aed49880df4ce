#include <gtest/gtest.h>

#include <fstream>

#include "ovadet/errors.hpp"
#include "ovadet/evaluation.hpp"
#include "ovadet/fusion.hpp"
#include "test_support.hpp"

using namespace ovadet;

namespace {

ClassScores two_class(double a, double b, int ia = 0, int ib = 1) {
  ClassScores::Values v{};
  v[static_cast<std::size_t>(ia)] = a;
  v[static_cast<std::size_t>(ib)] = b;
  return ClassScores::checked(v);
}

FinalPrediction pred(const std::string& image, BoundingBox box, int label, double confidence) {
  FinalPrediction p;
  p.image_id = image;
  p.box = box;
  p.label = CategoryId(label);
  p.confidence = confidence;
  p.fused = ClassScores::one_hot(CategoryId(label));
  p.det_scores = p.fused;
  p.svm_scores = p.fused;
  return p;
}

MatchResult matched(int truth, int predicted) {
  MatchResult m;
  m.image_id = "img";
  m.matched = true;
  m.iou = 0.8;
  m.true_label = CategoryId(truth);
  m.pred_label = CategoryId(predicted);
  m.pred_confidence = 0.9;
  return m;
}

}  // namespace

TEST(Fusion, EqualOneHotsAreIdempotent) {
  const auto h = ClassScores::one_hot(CategoryId(3));
  EXPECT_EQ(fuse_average(h, h), h);
}

TEST(Fusion, UniformPlusOneHot) {
  const auto f = fuse_average(ClassScores::uniform(), ClassScores::one_hot(CategoryId(7)));
  EXPECT_NEAR(f[7], 6.0 / 11.0, 1e-15);
  EXPECT_NEAR(f[0], 1.0 / 22.0, 1e-15);
  EXPECT_EQ(f.argmax().value(), 7);
}

TEST(Fusion, DisagreementResolvedByAverage) {
  const auto f = fuse_average(two_class(0.7, 0.3), two_class(0.2, 0.8));
  EXPECT_NEAR(f[0], 0.45, 1e-15);
  EXPECT_NEAR(f[1], 0.55, 1e-15);
  EXPECT_EQ(final_label(f).first.value(), 1);
}

TEST(Fusion, RawVectorsMustBeOnSimplex) {
  std::array<double, kNumClasses> good{};
  good[0] = 1.0;
  std::array<double, kNumClasses> bad{};
  bad[0] = 0.9;
  EXPECT_NO_THROW(fuse_average(good, good));
  EXPECT_THROW(fuse_average(good, bad), ContractError);
  EXPECT_THROW(fuse_average(std::span<const double>(good).first(5), good), ContractError);
}

TEST(FinalLabel, Examples) {
  const auto [l5, c5] = final_label(ClassScores::one_hot(CategoryId(5)));
  EXPECT_EQ(l5.value(), 5);
  EXPECT_EQ(c5, 1.0);
  EXPECT_EQ(final_label(two_class(0.5, 0.5, 2, 9)).first.value(), 2);
  const auto [l0, c0] = final_label(ClassScores::uniform());
  EXPECT_EQ(l0.value(), 0);
  EXPECT_NEAR(c0, 1.0 / 11.0, 1e-15);
}

TEST(PredictionsJson, RoundTrip) {
  PredictionSet set;
  set.predictions.push_back(pred("a", {1, 2, 30, 40}, 4, 0.8));
  set.images.push_back({"a", 1});
  set.images.push_back({"b", 0});
  set.errors.push_back({"c.png", "unreadable"});
  const auto doc = predictions_to_json(set, "0123456789abcdef");
  EXPECT_EQ(doc["format_version"], 1);
  EXPECT_EQ(doc["config_hash"], "0123456789abcdef");
  EXPECT_EQ(doc["images"][1]["misdetected"], true);
  const auto back = predictions_from_json(doc);
  ASSERT_EQ(back.predictions.size(), 1u);
  EXPECT_EQ(back.predictions[0].box, set.predictions[0].box);
  EXPECT_EQ(back.predictions[0].label, set.predictions[0].label);
  EXPECT_EQ(back.predictions[0].fused, set.predictions[0].fused);
  EXPECT_EQ(back.images.size(), 2u);
  EXPECT_EQ(back.errors.size(), 1u);
  auto broken = doc;
  broken["predictions"][0]["label_id"] = 11;
  EXPECT_THROW(predictions_from_json(broken), SchemaError);
}

TEST(Matching, SinglePredictionMatches) {
  const std::vector<Annotation> gts{{{0, 0, 10, 10}, CategoryId(2)}};
  // 10x10 vs 10x9 inside it: IOU 0.9
  const std::vector<FinalPrediction> preds{pred("i", {0, 0, 10, 9}, 2, 0.7)};
  const auto m = match_detections("i", preds, gts, 0.5);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_TRUE(m[0].matched);
  EXPECT_NEAR(m[0].iou, 0.9, 1e-12);
  EXPECT_EQ(m[0].pred_label->value(), 2);
  EXPECT_EQ(m[0].true_label->value(), 2);
}

TEST(Matching, ZeroPredictions) {
  const std::vector<Annotation> gts{{{0, 0, 10, 10}, CategoryId(2)}};
  const auto m = match_detections("i", {}, gts, 0.5);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_FALSE(m[0].matched);
  EXPECT_EQ(m[0].iou, 0.0);
  EXPECT_FALSE(m[0].pred_label.has_value());
}

TEST(Matching, GreedyByConfidenceNotByIou) {
  const std::vector<Annotation> gts{{{0, 0, 100, 100}, CategoryId(1)}};
  const std::vector<FinalPrediction> preds{pred("i", {0, 0, 100, 95}, 3, 0.8),   // IOU 0.95
                                           pred("i", {0, 0, 100, 60}, 1, 0.9)};  // IOU 0.6
  const auto m = match_detections("i", preds, gts, 0.5);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_TRUE(m[0].matched);
  EXPECT_NEAR(m[0].iou, 0.6, 1e-12);
  EXPECT_EQ(m[0].pred_label->value(), 1);
  EXPECT_DOUBLE_EQ(m[0].pred_confidence, 0.9);
}

TEST(Report, AllCorrect) {
  std::vector<MatchResult> ms;
  for (int k = 0; k < kNumClasses; ++k) ms.push_back(matched(k, k));
  const auto r = build_report(ms);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.macro_f1, 1.0);
  EXPECT_EQ(r.misdetections, 0u);
  for (std::size_t i = 0; i < r.confusion.size(); ++i) {
    for (std::size_t j = 0; j < r.confusion.size(); ++j) EXPECT_EQ(r.confusion[i][j], i == j ? 1u : 0u);
  }
  EXPECT_EQ(r.iou_histogram.total(), 11u);
  EXPECT_EQ(r.iou_histogram.counts[16], 11u);
}

TEST(Report, MisdetectionsCountedSeparately) {
  std::vector<MatchResult> ms{matched(1, 1), matched(1, 2)};
  MatchResult miss;
  miss.image_id = "other";
  ms.push_back(miss);
  const auto r = build_report(ms);
  EXPECT_EQ(r.matched, 2u);
  EXPECT_EQ(r.misdetections, 1u);
  EXPECT_EQ(r.misdetected_images, 1u);
  EXPECT_EQ(r.total_images, 2u);
  EXPECT_DOUBLE_EQ(*r.accuracy, 0.5);
  EXPECT_DOUBLE_EQ(*r.accuracy_with_misdetections, 1.0 / 3.0);
  // classes 1 and 2 are active: F1(1) = 2/3, F1(2) = 0
  EXPECT_NEAR(*r.macro_f1, 1.0 / 3.0, 1e-15);
}

TEST(Report, NothingMatched) {
  MatchResult miss;
  miss.image_id = "x";
  const std::vector<MatchResult> ms{miss};
  const auto r = build_report(ms);
  EXPECT_FALSE(r.accuracy.has_value());
  EXPECT_FALSE(r.macro_f1.has_value());
  EXPECT_EQ(report_to_json(r)["accuracy_defined"], false);
}

TEST(Histogram, EdgesAndTopValue) {
  const std::vector<double> v{0.0, 0.05, 0.5, 0.999, 1.0};
  const auto h = Histogram::of(v, 20);
  EXPECT_EQ(h.counts[0], 1u);
  EXPECT_EQ(h.counts[1], 1u);
  EXPECT_EQ(h.counts[10], 1u);
  EXPECT_EQ(h.counts[19], 2u);
  EXPECT_THROW(Histogram::of(v, 0), ConfigError);
}

TEST(ExportPlots, WritesNonEmptyFilesAndStableJson) {
  test::TempDir a, b;
  std::vector<MatchResult> ms{matched(0, 0), matched(3, 4)};
  const auto r = build_report(ms);
  export_plots(r, a.path(), {{"run", "x"}});
  export_plots(r, b.path(), {{"run", "x"}});
  for (const char* f : {"report.json", "confusion_matrix.csv", "iou_hist.png", "confidence_hist.png",
                        "confusion_matrix.png"}) {
    ASSERT_TRUE(std::filesystem::exists(a / f)) << f;
    EXPECT_GT(std::filesystem::file_size(a / f), 0u) << f;
  }
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(a / "report.json"), slurp(b / "report.json"));
}

TEST(ExportPlots, EmptyReportStillRenders) {
  test::TempDir dir;
  EXPECT_NO_THROW(export_plots(build_report({}), dir.path()));
  EXPECT_GT(std::filesystem::file_size(dir / "iou_hist.png"), 0u);
}

TEST(ConfusionCsv, HeaderAndRows) {
  ConfusionMatrix m{};
  m[2][5] = 7;
  const auto csv = confusion_csv(m);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 12);
  EXPECT_NE(csv.find("Enterobius vermicularis,0,0,0,0,0,7"), std::string::npos);
}
