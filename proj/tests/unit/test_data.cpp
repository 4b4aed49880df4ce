#include <gtest/gtest.h>

#include <fstream>
#include <numeric>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "ovadet/dataset.hpp"
#include "ovadet/errors.hpp"
#include "ovadet/preprocess.hpp"
#include "ovadet/synth.hpp"
#include "test_support.hpp"

using namespace ovadet;
using nlohmann::json;

namespace {

json two_image_doc() {
  return json::parse(R"({
    "images": [{"id": 1, "file_name": "a.png", "width": 100, "height": 80},
               {"id": "b", "file_name": "b.png", "width": 100, "height": 80}],
    "annotations": [{"id": 1, "image_id": 1, "bbox": [10, 10, 20, 30], "category_id": 7},
                    {"id": 2, "image_id": "b", "bbox": [5, 5, 0, 10], "category_id": 7},
                    {"id": 3, "image_id": "b", "bbox": [50, 40, 10, 10], "category_id": 3}],
    "categories": [{"id": 7, "name": "Hookworm egg"}, {"id": 3, "name": "Taenia spp. egg"}]
  })");
}

cv::Mat gradient_image(int w, int h) {
  cv::Mat m(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) m.at<cv::Vec3b>(y, x) = cv::Vec3b(x % 256, y % 256, (x + y) % 256);
  }
  return m;
}

}  // namespace

TEST(Annotations, ParsesAndRejectsDegenerateBox) {
  const auto file = parse_annotations(two_image_doc());
  ASSERT_EQ(file.images.size(), 2u);
  EXPECT_EQ(file.images[0].image_id, "1");
  ASSERT_EQ(file.images[0].annotations.size(), 1u);
  EXPECT_EQ(file.images[0].annotations[0].box, (BoundingBox{10, 10, 30, 40}));
  EXPECT_EQ(file.images[0].annotations[0].category.value(), 4);
  ASSERT_EQ(file.images[1].annotations.size(), 1u);
  EXPECT_EQ(file.images[1].annotations[0].category.value(), 9);
  EXPECT_EQ(file.warnings.size(), 1u);
}

TEST(Annotations, UnknownCategoryNameIsSchemaError) {
  auto doc = two_image_doc();
  doc["categories"][0]["name"] = "Giardia lamblia";
  EXPECT_THROW(parse_annotations(doc), SchemaError);
}

TEST(Annotations, EmptyListGivesEmptyDataset) {
  test::TempDir dir;
  const json doc{{"images", json::array()}, {"annotations", json::array()}, {"categories", json::array()}};
  std::ofstream(dir / "ann.json") << doc.dump();
  const auto ds = load_dataset(dir.path(), dir / "ann.json");
  EXPECT_TRUE(ds.images.empty());
  EXPECT_TRUE(ds.errors.empty());
}

TEST(Annotations, RoundTripThroughJson) {
  const auto file = parse_annotations(two_image_doc());
  const auto again = parse_annotations(to_annotation_json(file.images));
  ASSERT_EQ(again.images.size(), file.images.size());
  for (std::size_t i = 0; i < file.images.size(); ++i) {
    EXPECT_EQ(again.images[i].image_id, file.images[i].image_id);
    EXPECT_EQ(again.images[i].annotations, file.images[i].annotations);
  }
}

TEST(LoadDataset, MissingImageIsItemized) {
  test::TempDir dir;
  const auto images = synth_generate(test::small_synth(1), 5);
  write_dataset(dir.path(), images);
  std::filesystem::remove(dir.path() / "images" / (images[3].image_id + ".png"));
  const auto ds = load_dataset(dir.path(), dir / "annotations.json");
  EXPECT_EQ(ds.images.size(), 10u);
  ASSERT_EQ(ds.errors.size(), 1u);
  EXPECT_NE(ds.errors[0].find(images[3].image_id), std::string::npos);
}

TEST(LoadDataset, WrittenDatasetReloadsBitExact) {
  test::TempDir dir;
  const auto images = synth_generate(test::small_synth(1), 5);
  write_dataset(dir.path(), images);
  const auto ds = load_dataset(dir.path(), dir / "annotations.json");
  ASSERT_EQ(ds.images.size(), images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    EXPECT_EQ(ds.images[i].image_id, images[i].image_id);
    EXPECT_EQ(cv::norm(ds.images[i].pixels, images[i].pixels, cv::NORM_INF), 0.0);
    EXPECT_EQ(ds.images[i].annotations, images[i].annotations);
  }
  EXPECT_EQ(std::accumulate(ds.per_category.begin(), ds.per_category.end(), std::size_t{0}), 11u);
}

TEST(Split, ElevenThousandImages) {
  std::vector<int> strata(11000);
  for (std::size_t i = 0; i < strata.size(); ++i) strata[i] = static_cast<int>(i % 11);
  const auto s = split_indices(strata, SplitSpec{});
  EXPECT_EQ(s.train.size(), 6600u);
  EXPECT_EQ(s.val.size(), 2200u);
  EXPECT_EQ(s.test.size(), 2200u);
}

TEST(Split, TenImagesOneCategory) {
  const std::vector<int> strata(10, 4);
  const auto s = split_indices(strata, SplitSpec{});
  EXPECT_EQ(s.train.size(), 6u);
  EXPECT_EQ(s.val.size(), 2u);
  EXPECT_EQ(s.test.size(), 2u);
}

TEST(Split, AllTrain) {
  const std::vector<int> strata{0, 1, 2, 2, 3, -1};
  const auto s = split_indices(strata, SplitSpec{1.0, 0.0, 0.0, 9});
  EXPECT_EQ(s.train, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  EXPECT_TRUE(s.val.empty());
  EXPECT_TRUE(s.test.empty());
}

TEST(Split, PartitionsDisjointSortedAndSeedDependent) {
  std::vector<int> strata(330);
  for (std::size_t i = 0; i < strata.size(); ++i) strata[i] = static_cast<int>(i % 11);
  const auto a = split_indices(strata, SplitSpec{0.6, 0.2, 0.2, 1});
  const auto b = split_indices(strata, SplitSpec{0.6, 0.2, 0.2, 1});
  const auto c = split_indices(strata, SplitSpec{0.6, 0.2, 0.2, 2});
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(a.test, c.test);
  std::vector<std::size_t> all;
  for (const auto* part : {&a.train, &a.val, &a.test}) {
    EXPECT_TRUE(std::is_sorted(part->begin(), part->end()));
    all.insert(all.end(), part->begin(), part->end());
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expected(330);
  std::iota(expected.begin(), expected.end(), 0);
  EXPECT_EQ(all, expected);
  // every class lands 6/2/2 out of 30
  std::array<int, kNumClasses> per_class{};
  for (auto i : a.test) ++per_class[static_cast<std::size_t>(strata[i])];
  for (int n : per_class) EXPECT_EQ(n, 6);
}

TEST(Split, BadFractionsRejected) {
  EXPECT_THROW((SplitSpec{0.5, 0.5, 0.5, 0}.validate()), ConfigError);
  EXPECT_THROW((SplitSpec{1.2, -0.2, 0.0, 0}.validate()), ConfigError);
  EXPECT_NO_THROW((SplitSpec{0.7, 0.2, 0.1, 0}.validate()));
}

TEST(Preprocess, SquareFullFrameBox) {
  AnnotatedImage img{"x", cv::Mat(1024, 1024, CV_8UC3, cv::Scalar(10, 20, 30)), {{{0, 0, 1024, 1024}, CategoryId(1)}}};
  const auto in = preprocess_for_detector(img);
  EXPECT_EQ(in.image.side, 512);
  ASSERT_EQ(in.annotations.size(), 1u);
  EXPECT_EQ(in.annotations[0].box, (BoundingBox{0, 0, 512, 512}));
}

TEST(Preprocess, PerAxisScale) {
  AnnotatedImage img{"x", cv::Mat(512, 1024, CV_8UC3, cv::Scalar::all(0)), {{{512, 0, 1024, 512}, CategoryId(1)}}};
  const auto in = preprocess_for_detector(img);
  EXPECT_EQ(in.annotations[0].box, (BoundingBox{256, 0, 512, 512}));
  EXPECT_DOUBLE_EQ(in.image.scale_x, 2.0);
  EXPECT_DOUBLE_EQ(in.image.scale_y, 1.0);
}

TEST(Preprocess, ZeroImageNormalizesToMinusMeanOverStd) {
  const ImageNetStats stats;
  const auto n = normalize_square(cv::Mat(512, 512, CV_8UC3, cv::Scalar::all(0)), 512);
  for (int c = 0; c < 3; ++c) {
    const float expected = static_cast<float>(-stats.mean[c] / stats.std[c]);
    for (int y = 0; y < 512; y += 37) {
      for (int x = 0; x < 512; x += 41) EXPECT_FLOAT_EQ(n.at(c, y, x), expected);
    }
  }
}

TEST(Preprocess, BoxCornersRoundTrip) {
  const auto n = normalize_square(cv::Mat(333, 777, CV_8UC3, cv::Scalar::all(0)), 512);
  const BoundingBox b{13.5, 7.25, 700.0, 321.0};
  const auto back = to_source_frame(to_normalized_frame(b, n), n);
  EXPECT_NEAR(back.xmin, b.xmin, 0.5);
  EXPECT_NEAR(back.ymin, b.ymin, 0.5);
  EXPECT_NEAR(back.xmax, b.xmax, 0.5);
  EXPECT_NEAR(back.ymax, b.ymax, 0.5);
}

TEST(Preprocess, ClassifierSizes) {
  const auto big = preprocess_for_classifier(cv::Mat(600, 600, CV_8UC3, cv::Scalar(1, 2, 3)));
  EXPECT_EQ(big.side, 600);
  EXPECT_DOUBLE_EQ(big.scale_x, 1.0);
  const auto half = preprocess_for_classifier(cv::Mat(300, 300, CV_8UC3, cv::Scalar(1, 2, 3)));
  EXPECT_DOUBLE_EQ(half.scale_x, 0.5);
  EXPECT_DOUBLE_EQ(half.scale_y, 0.5);
  const auto dot = preprocess_for_classifier(cv::Mat(1, 1, CV_8UC3, cv::Scalar(200, 100, 50)));
  EXPECT_EQ(dot.side, 600);
  for (int c = 0; c < 3; ++c) {
    EXPECT_FLOAT_EQ(dot.at(c, 0, 0), dot.at(c, 599, 599));
    EXPECT_FLOAT_EQ(dot.at(c, 0, 0), dot.at(c, 300, 17));
  }
}

TEST(Preprocess, GrayscaleIsReplicatedWithWarning) {
  std::vector<std::string> warnings;
  const auto n = normalize_square(cv::Mat(20, 20, CV_8UC1, cv::Scalar(128)), 32, &warnings);
  EXPECT_EQ(warnings.size(), 1u);
  const ImageNetStats stats;
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(n.at(c, 5, 5), (128.0 / 255.0 - stats.mean[c]) / stats.std[c], 1e-5);
  }
}

TEST(Crop, FullImageIsIdentity) {
  const cv::Mat img = gradient_image(100, 60);
  const cv::Mat crop = crop_box(img, {0, 0, 100, 60});
  ASSERT_EQ(crop.size(), img.size());
  EXPECT_EQ(cv::norm(crop, img, cv::NORM_INF), 0.0);
}

TEST(Crop, ClampsToImage) {
  EXPECT_EQ(crop_region({-10, -10, 20, 20}, 100, 100), cv::Rect(0, 0, 20, 20));
  EXPECT_THROW(crop_region({150, 150, 160, 160}, 100, 100), ContractError);
}

TEST(Crop, CoordinateBookkeeping) {
  const cv::Mat img = gradient_image(100, 100);
  const cv::Mat crop = crop_box(img, {10, 20, 50, 60});
  EXPECT_EQ(crop.cols, 40);
  EXPECT_EQ(crop.rows, 40);
  EXPECT_EQ(crop.at<cv::Vec3b>(0, 0), img.at<cv::Vec3b>(20, 10));
  EXPECT_EQ(crop.at<cv::Vec3b>(39, 39), img.at<cv::Vec3b>(59, 49));
}

TEST(Synth, CountsAndOneBoxEach) {
  const auto images = synth_generate(test::small_synth(10), 1);
  ASSERT_EQ(images.size(), 110u);
  for (std::size_t i = 0; i < images.size(); ++i) {
    ASSERT_EQ(images[i].annotations.size(), 1u);
    EXPECT_EQ(images[i].annotations[0].category.value(), static_cast<int>(i % 11));
    const auto& b = images[i].annotations[0].box;
    EXPECT_TRUE(b.valid());
    EXPECT_GE(b.xmin, 0.0);
    EXPECT_LE(b.xmax, images[i].width());
  }
}

TEST(Synth, SameSeedByteIdentical) {
  const auto a = synth_generate(test::small_synth(2), 9);
  const auto b = synth_generate(test::small_synth(2), 9);
  const auto c = synth_generate(test::small_synth(2), 10);
  ASSERT_EQ(a.size(), b.size());
  double diff_c = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(cv::norm(a[i].pixels, b[i].pixels, cv::NORM_INF), 0.0);
    EXPECT_EQ(a[i].annotations, b[i].annotations);
    diff_c += cv::norm(a[i].pixels, c[i].pixels, cv::NORM_L1);
  }
  EXPECT_GT(diff_c, 0.0);
}

TEST(Synth, ZeroNoiseGivesFlatBackground) {
  auto cfg = test::small_synth(1);
  cfg.noise_sigma = 0.0;
  for (const auto& img : synth_generate(cfg, 4)) {
    const auto& b = img.annotations[0].box;
    cv::Mat mask(img.pixels.size(), CV_8U, cv::Scalar(255));
    // Exclude the egg's bounding box (plus a pixel of anti-aliasing margin).
    cv::rectangle(mask, cv::Point(static_cast<int>(b.xmin) - 1, static_cast<int>(b.ymin) - 1),
                  cv::Point(static_cast<int>(b.xmax) + 1, static_cast<int>(b.ymax) + 1), cv::Scalar(0), cv::FILLED);
    const cv::Vec3b first = img.pixels.at<cv::Vec3b>(0, 0);
    std::size_t differing = 0;
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) {
        if (mask.at<std::uint8_t>(y, x) != 0 && img.pixels.at<cv::Vec3b>(y, x) != first) ++differing;
      }
    }
    EXPECT_EQ(differing, 0u) << img.image_id;
  }
}

TEST(Synth, ConfigParsing) {
  const auto c = parse_synth_config("# comment\nper_class_count = 3\n\nimage_size: 64\nnoise_sigma=0\nseed = 12\n");
  EXPECT_EQ(c.per_class_count, 3);
  EXPECT_EQ(c.image_size, 64);
  EXPECT_EQ(c.noise_sigma, 0.0);
  EXPECT_EQ(c.seed, 12u);
  EXPECT_THROW(parse_synth_config("colour = red\n"), ConfigError);
  EXPECT_THROW(parse_synth_config("image_size = 8\n").validate(), ConfigError);
}
