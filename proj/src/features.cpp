#include "ovadet/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>

#include "ovadet/errors.hpp"
#include "ovadet/nn.hpp"
#include "ovadet/random.hpp"

namespace ovadet {

namespace {

/// 600x600 input is average-pooled to 60x60, then three ReLU conv stages (24, 48, 96 channels,
/// max pool between). The pooled descriptor concatenates input colour moments, global averages
/// of every stage, the global max of the last stage and its 3x3 spatial grid averages; a fixed
/// Gaussian projection lifts it to 2560 dimensions.
class TinyFrozenExtractor final : public FeatureExtractor {
 public:
  static constexpr int kPool = 10;

  explicit TinyFrozenExtractor(std::uint64_t seed) : seed_(seed) {
    Rng rng(seed);
    conv1_.init(rng);
    conv2_.init(rng);
    conv3_.init(rng);
    for (float& b : conv1_.bias.value) b = static_cast<float>(rng.normal() * 0.1);
    for (float& b : conv2_.bias.value) b = static_cast<float>(rng.normal() * 0.1);
    for (float& b : conv3_.bias.value) b = static_cast<float>(rng.normal() * 0.1);
    projection_.resize(static_cast<std::size_t>(kFeatureDim) * kDescriptor);
    const double scale = 1.0 / std::sqrt(static_cast<double>(kDescriptor));
    for (float& w : projection_) w = static_cast<float>(rng.normal() * scale);
  }

  std::string id() const override { return kTinyExtractor; }
  std::uint64_t seed() const override { return seed_; }
  int input_side() const override { return kClassifierSide; }

  FeatureVector extract(const NormalizedImage& crop) const override {
    nn::Tensor x(3, crop.side, crop.side);
    x.data = crop.data;
    const nn::Tensor x0 = nn::avgpool(x, kPool);

    std::vector<float> desc;
    desc.reserve(kDescriptor);
    for (int c = 0; c < 3; ++c) {
      double sum = 0.0;
      double sq = 0.0;
      for (std::size_t i = 0; i < x0.plane(); ++i) {
        const double v = x0.data[c * x0.plane() + i];
        sum += v;
        sq += v * v;
      }
      const double mean = sum / static_cast<double>(x0.plane());
      desc.push_back(static_cast<float>(mean));
      desc.push_back(static_cast<float>(std::sqrt(std::max(0.0, sq / static_cast<double>(x0.plane()) - mean * mean))));
    }

    nn::Tensor y1 = conv1_.forward(x0);
    nn::relu_inplace(y1);
    append_mean(y1, desc);
    nn::Tensor y2 = conv2_.forward(nn::maxpool2(y1));
    nn::relu_inplace(y2);
    append_mean(y2, desc);
    nn::Tensor y3 = conv3_.forward(nn::maxpool2(y2));
    nn::relu_inplace(y3);
    append_mean(y3, desc);
    for (int c = 0; c < y3.c; ++c) {
      float m = 0.0f;
      for (std::size_t i = 0; i < y3.plane(); ++i) m = std::max(m, y3.data[c * y3.plane() + i]);
      desc.push_back(m);
    }
    for (int gy = 0; gy < 3; ++gy) {
      for (int gx = 0; gx < 3; ++gx) {
        const int y0 = gy * y3.h / 3, y1e = (gy + 1) * y3.h / 3;
        const int x0c = gx * y3.w / 3, x1e = (gx + 1) * y3.w / 3;
        for (int c = 0; c < y3.c; ++c) {
          double s = 0.0;
          for (int yy = y0; yy < y1e; ++yy) {
            for (int xx = x0c; xx < x1e; ++xx) s += y3.at(c, yy, xx);
          }
          desc.push_back(static_cast<float>(s / ((y1e - y0) * (x1e - x0c))));
        }
      }
    }

    std::vector<float> out(kFeatureDim, 0.0f);
    for (int o = 0; o < kFeatureDim; ++o) {
      const float* row = projection_.data() + static_cast<std::size_t>(o) * kDescriptor;
      double s = 0.0;
      for (int i = 0; i < kDescriptor; ++i) s += static_cast<double>(row[i]) * desc[static_cast<std::size_t>(i)];
      out[static_cast<std::size_t>(o)] = static_cast<float>(s);
    }
    return FeatureVector(std::move(out));
  }

 private:
  static constexpr int kDescriptor = 6 + 24 + 48 + 96 + 96 + 9 * 96;

  static void append_mean(const nn::Tensor& t, std::vector<float>& desc) {
    for (int c = 0; c < t.c; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < t.plane(); ++i) s += t.data[c * t.plane() + i];
      desc.push_back(static_cast<float>(s / static_cast<double>(t.plane())));
    }
  }

  std::uint64_t seed_;
  nn::Conv2d conv1_{3, 24, 3};
  nn::Conv2d conv2_{24, 48, 3};
  nn::Conv2d conv3_{48, 96, 3};
  std::vector<float> projection_;
};

constexpr char kCacheMagic[8] = {'O', 'V', 'F', 'C', 'A', 'C', '0', '1'};

}  // namespace

FeatureVector::FeatureVector(std::vector<float> values) : values_(std::move(values)) {
  if (values_.size() != static_cast<std::size_t>(kFeatureDim)) {
    throw ContractError("feature vector must have 2560 components, got " + std::to_string(values_.size()));
  }
}

bool FeatureVector::finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](float v) { return std::isfinite(v); });
}

std::unique_ptr<FeatureExtractor> make_feature_extractor(const std::string& id, std::uint64_t seed) {
  if (const char* dev = std::getenv("OVADET_DEVICE"); dev != nullptr && *dev != '\0' && std::string(dev) != "cpu") {
    throw CapabilityError(std::string("compute device '") + dev + "' is not supported by this build (only 'cpu')");
  }
  if (id == kTinyExtractor) return std::make_unique<TinyFrozenExtractor>(seed);
  if (id == kEfficientNetExtractor) {
    throw CapabilityError("feature backbone '" + id +
                          "' needs ImageNet-pretrained EfficientNet-B7 weights, which this build does not include; "
                          "set svm.extractor_id=tiny_frozen_cnn for the reference extractor");
  }
  throw ConfigError("unknown feature extractor '" + id + "'");
}

FeatureVector extract_features(const FeatureExtractor& extractor, const NormalizedImage& crop600) {
  if (crop600.side != extractor.input_side()) {
    throw ContractError("extractor expects side " + std::to_string(extractor.input_side()) + ", got " +
                        std::to_string(crop600.side));
  }
  return extractor.extract(crop600);
}

std::string FeatureCache::key(const std::string& image_id, const BoundingBox& box) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double v : {box.xmin, box.ymin, box.xmax, box.ymax}) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffU;
      h *= 1099511628211ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return image_id + "|" + hex;
}

const FeatureVector* FeatureCache::find(const std::string& key) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

void FeatureCache::insert(const std::string& key, FeatureVector value) { entries_.insert_or_assign(key, std::move(value)); }

void FeatureCache::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature cache " + path.string());
  const auto count = static_cast<std::uint64_t>(entries_.size());
  out.write(kCacheMagic, sizeof kCacheMagic);
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  for (const auto& [k, v] : entries_) {
    const auto len = static_cast<std::uint32_t>(k.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(k.data(), len);
    out.write(reinterpret_cast<const char*>(v.values().data()), kFeatureDim * sizeof(float));
  }
  if (!out) throw IoError("short write on feature cache " + path.string());
}

FeatureCache FeatureCache::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature cache " + path.string());
  char magic[sizeof kCacheMagic];
  std::uint64_t count = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  if (!in || std::memcmp(magic, kCacheMagic, sizeof magic) != 0) throw SchemaError("bad feature cache header");
  FeatureCache cache;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    std::string k(len, '\0');
    in.read(k.data(), len);
    std::vector<float> v(kFeatureDim);
    in.read(reinterpret_cast<char*>(v.data()), kFeatureDim * sizeof(float));
    if (!in) throw SchemaError("truncated feature cache " + path.string());
    cache.entries_.emplace(std::move(k), FeatureVector(std::move(v)));
  }
  return cache;
}

}  // namespace ovadet
