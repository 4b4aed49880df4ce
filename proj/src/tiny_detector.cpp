#include "tiny_detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ovadet/errors.hpp"

namespace ovadet {

namespace {

constexpr int kObj = 0;
constexpr int kCls = 1;
constexpr int kBox = 1 + kNumClasses;
constexpr double kFocalAlpha = 2.0;
constexpr double kFocalBeta = 4.0;
constexpr double kBoxWeight = 1.0;
constexpr double kMaxGradNorm = 10.0;
constexpr float kObjectnessPriorBias = -2.19f;  // sigmoid ~ 0.1
constexpr double kLogSizeClamp = 4.0;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct CellTarget {
  int object = -1;  // index into annotations, -1 if unassigned
  double tx = 0, ty = 0, tw = 0, th = 0;
};

}  // namespace

struct TinyDetectorBackend::Activations {
  std::vector<float> col1, col2, col3, col4, col_head;
  nn::Tensor x0, y1, p1, y2, p2, y3, y4;
  std::vector<std::uint32_t> arg1, arg2;
};

TinyDetectorBackend::TinyDetectorBackend(int input_side) : input_side_(input_side) {
  if (input_side % kPooledSide != 0) {
    throw ConfigError("tiny_cnn backend needs input_side divisible by 64, got " + std::to_string(input_side));
  }
}

std::vector<float> TinyDetectorBackend::prepare(const NormalizedImage& image) const {
  if (image.side != input_side_) {
    throw ContractError("detector input side " + std::to_string(image.side) + " != " + std::to_string(input_side_));
  }
  nn::Tensor x(3, image.side, image.side);
  x.data = image.data;
  return nn::avgpool(x, input_side_ / kPooledSide).data;
}

nn::Tensor TinyDetectorBackend::forward(std::span<const float> prepared, Activations* keep) const {
  Activations local;
  Activations& a = keep ? *keep : local;
  a.x0 = nn::Tensor(3, kPooledSide, kPooledSide);
  if (prepared.size() != a.x0.data.size()) throw ContractError("prepared detector input has wrong size");
  std::copy(prepared.begin(), prepared.end(), a.x0.data.begin());

  a.y1 = conv1_.forward(a.x0, keep ? &a.col1 : nullptr);
  nn::relu_inplace(a.y1);
  a.p1 = nn::maxpool2(a.y1, keep ? &a.arg1 : nullptr);
  a.y2 = conv2_.forward(a.p1, keep ? &a.col2 : nullptr);
  nn::relu_inplace(a.y2);
  a.p2 = nn::maxpool2(a.y2, keep ? &a.arg2 : nullptr);
  a.y3 = conv3_.forward(a.p2, keep ? &a.col3 : nullptr);
  nn::relu_inplace(a.y3);
  a.y4 = conv4_.forward(a.y3, keep ? &a.col4 : nullptr);
  nn::relu_inplace(a.y4);
  return head_.forward(a.y4, keep ? &a.col_head : nullptr);
}

std::vector<nn::Param*> TinyDetectorBackend::params() {
  return {&conv1_.weight, &conv1_.bias, &conv2_.weight, &conv2_.bias, &conv3_.weight, &conv3_.bias,
          &conv4_.weight, &conv4_.bias, &head_.weight,  &head_.bias};
}

std::vector<const nn::Param*> TinyDetectorBackend::params() const {
  return {&conv1_.weight, &conv1_.bias, &conv2_.weight, &conv2_.bias, &conv3_.weight, &conv3_.bias,
          &conv4_.weight, &conv4_.bias, &head_.weight,  &head_.bias};
}

double TinyDetectorBackend::sample_loss(const PreparedSample& sample, bool accumulate) {
  Activations acts;
  const nn::Tensor out = forward(sample.input, accumulate ? &acts : nullptr);
  const double cell = cell_size();
  const auto& anns = sample.annotations;

  // Heatmap targets and per-cell regression assignments.
  std::vector<double> heat(static_cast<std::size_t>(kGrid) * kGrid, 0.0);
  std::vector<CellTarget> assign(heat.size());
  std::vector<double> assigned_area(heat.size(), std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < anns.size(); ++k) {
    const auto& box = anns[k].box;
    const double cx = (box.xmin + box.xmax) / 2.0;
    const double cy = (box.ymin + box.ymax) / 2.0;
    const int gx = std::clamp(static_cast<int>(std::floor(cx / cell)), 0, kGrid - 1);
    const int gy = std::clamp(static_cast<int>(std::floor(cy / cell)), 0, kGrid - 1);
    const double sigma = std::max(0.6, std::min(box.width(), box.height()) / cell / 5.0);
    for (int y = 0; y < kGrid; ++y) {
      for (int x = 0; x < kGrid; ++x) {
        const double d2 = static_cast<double>((x - gx) * (x - gx) + (y - gy) * (y - gy));
        auto& h = heat[static_cast<std::size_t>(y) * kGrid + x];
        h = std::max(h, (x == gx && y == gy) ? 1.0 : std::exp(-d2 / (2.0 * sigma * sigma)));
      }
    }
    for (int y = std::max(0, gy - 1); y <= std::min(kGrid - 1, gy + 1); ++y) {
      for (int x = std::max(0, gx - 1); x <= std::min(kGrid - 1, gx + 1); ++x) {
        const double ccx = (x + 0.5) * cell;
        const double ccy = (y + 0.5) * cell;
        const bool centre = x == gx && y == gy;
        if (!centre && (ccx <= box.xmin || ccx >= box.xmax || ccy <= box.ymin || ccy >= box.ymax)) continue;
        const auto idx = static_cast<std::size_t>(y) * kGrid + x;
        if (box.area() >= assigned_area[idx]) continue;
        assigned_area[idx] = box.area();
        assign[idx] = {static_cast<int>(k), cx / cell - (x + 0.5), cy / cell - (y + 0.5),
                       std::log(box.width() / cell), std::log(box.height() / cell)};
      }
    }
  }

  const std::size_t plane = out.plane();
  nn::Tensor grad(out.c, out.h, out.w);
  const double n_obj = std::max<double>(1.0, static_cast<double>(anns.size()));
  std::size_t n_assigned = 0;
  for (const auto& t : assign) n_assigned += t.object >= 0 ? 1 : 0;
  const double inv_assigned = n_assigned > 0 ? 1.0 / static_cast<double>(n_assigned) : 0.0;

  double focal = 0.0;
  double ce = 0.0;
  double l1 = 0.0;
  constexpr double eps = 1e-12;
  for (std::size_t i = 0; i < plane; ++i) {
    const double p = std::clamp(sigmoid(out.data[kObj * plane + i]), 1e-7, 1.0 - 1e-7);
    const double t = heat[i];
    double dz = 0.0;
    if (t >= 1.0) {
      const double q = 1.0 - p;
      focal += -std::pow(q, kFocalAlpha) * std::log(p + eps);
      dz = kFocalAlpha * p * std::pow(q, kFocalAlpha) * std::log(p) - std::pow(q, kFocalAlpha + 1.0);
    } else {
      const double w = std::pow(1.0 - t, kFocalBeta);
      focal += -w * std::pow(p, kFocalAlpha) * std::log(1.0 - p + eps);
      dz = -w * (kFocalAlpha * std::pow(p, kFocalAlpha) * (1.0 - p) * std::log(1.0 - p) - std::pow(p, kFocalAlpha + 1.0));
    }
    grad.data[kObj * plane + i] = static_cast<float>(dz / n_obj);

    const CellTarget& target = assign[i];
    if (target.object < 0) continue;
    const int label = anns[static_cast<std::size_t>(target.object)].category.value();
    double peak = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < kNumClasses; ++c) peak = std::max(peak, static_cast<double>(out.data[(kCls + c) * plane + i]));
    double sum = 0.0;
    std::array<double, kNumClasses> prob{};
    for (int c = 0; c < kNumClasses; ++c) {
      prob[static_cast<std::size_t>(c)] = std::exp(out.data[(kCls + c) * plane + i] - peak);
      sum += prob[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < kNumClasses; ++c) {
      const double pc = prob[static_cast<std::size_t>(c)] / sum;
      if (c == label) ce += -std::log(pc + eps);
      grad.data[(kCls + c) * plane + i] = static_cast<float>((pc - (c == label ? 1.0 : 0.0)) * inv_assigned);
    }
    const double targets[4] = {target.tx, target.ty, target.tw, target.th};
    for (int r = 0; r < 4; ++r) {
      const double diff = out.data[(kBox + r) * plane + i] - targets[r];
      l1 += std::abs(diff);
      const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      grad.data[(kBox + r) * plane + i] = static_cast<float>(kBoxWeight * sign * inv_assigned);
    }
  }
  const double loss = focal / n_obj + ce * inv_assigned + kBoxWeight * l1 * inv_assigned;
  if (!accumulate) return loss;

  nn::Tensor d4 = head_.backward(grad, acts.col_head, kGrid, kGrid);
  nn::relu_backward(d4, acts.y4);
  nn::Tensor d3 = conv4_.backward(d4, acts.col4, kGrid, kGrid);
  nn::relu_backward(d3, acts.y3);
  nn::Tensor dp2 = conv3_.backward(d3, acts.col3, kGrid, kGrid);
  nn::Tensor d2 = nn::maxpool2_backward(dp2, acts.arg2, acts.y2.c, acts.y2.h, acts.y2.w);
  nn::relu_backward(d2, acts.y2);
  nn::Tensor dp1 = conv2_.backward(d2, acts.col2, acts.p1.h, acts.p1.w);
  nn::Tensor d1 = nn::maxpool2_backward(dp1, acts.arg1, acts.y1.c, acts.y1.h, acts.y1.w);
  nn::relu_backward(d1, acts.y1);
  conv1_.backward(d1, acts.col1, kPooledSide, kPooledSide, false);
  return loss;
}

TrainingLog TinyDetectorBackend::fit(std::span<const PreparedSample> train, std::span<const PreparedSample> val,
                                     const DetectorConfig& config, const EpochCallback& on_epoch) {
  Rng init_rng(config.seed);
  conv1_.init(init_rng);
  conv2_.init(init_rng);
  conv3_.init(init_rng);
  conv4_.init(init_rng);
  head_.init(init_rng);
  for (float& w : head_.weight.value) w *= 0.1f;
  head_.bias.value[kObj] = kObjectnessPriorBias;

  auto ps = params();
  for (auto* p : ps) {
    std::fill(p->m.begin(), p->m.end(), 0.0f);
    std::fill(p->v.begin(), p->v.end(), 0.0f);
    std::fill(p->grad.begin(), p->grad.end(), 0.0f);
  }
  nn::Adam adam({.learning_rate = config.learning_rate});
  Rng order_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  TrainingLog log{id(), deterministic(), {}};
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    order_rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      for (std::size_t i = start; i < end; ++i) total += sample_loss(train[order[i]], true);
      const double scale = 1.0 / static_cast<double>(end - start);
      const double norm = nn::grad_norm(ps) * scale;
      adam.step(ps, norm > kMaxGradNorm ? scale * kMaxGradNorm / norm : scale);
    }
    EpochRecord rec{epoch, total / static_cast<double>(train.size()), std::numeric_limits<double>::quiet_NaN()};
    if (!val.empty()) {
      double vtotal = 0.0;
      for (const auto& s : val) vtotal += sample_loss(s, false);
      rec.val_loss = vtotal / static_cast<double>(val.size());
    }
    log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return log;
}

std::vector<Candidate> TinyDetectorBackend::propose(std::span<const float> prepared, const DetectorConfig& config) const {
  const nn::Tensor out = forward(prepared, nullptr);
  const std::size_t plane = out.plane();
  const double cell = cell_size();
  auto obj = [&](int x, int y) { return out.data[kObj * plane + static_cast<std::size_t>(y) * kGrid + x]; };

  std::vector<Candidate> result;
  for (int y = 0; y < kGrid; ++y) {
    for (int x = 0; x < kGrid; ++x) {
      const float z = obj(x, y);
      bool peak = true;
      for (int dy = -1; dy <= 1 && peak; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx;
          const int ny = y + dy;
          if ((dx == 0 && dy == 0) || nx < 0 || ny < 0 || nx >= kGrid || ny >= kGrid) continue;
          if (obj(nx, ny) > z) {
            peak = false;
            break;
          }
        }
      }
      const double p = sigmoid(z);
      if (!peak || p < config.objectness_threshold) continue;

      const std::size_t i = static_cast<std::size_t>(y) * kGrid + x;
      std::array<double, kNumClasses> logits{};
      for (int c = 0; c < kNumClasses; ++c) logits[static_cast<std::size_t>(c)] = out.data[(kCls + c) * plane + i];
      const double cx = (x + 0.5 + out.data[(kBox + 0) * plane + i]) * cell;
      const double cy = (y + 0.5 + out.data[(kBox + 1) * plane + i]) * cell;
      const double w = std::exp(std::clamp<double>(out.data[(kBox + 2) * plane + i], -kLogSizeClamp, kLogSizeClamp)) * cell;
      const double h = std::exp(std::clamp<double>(out.data[(kBox + 3) * plane + i], -kLogSizeClamp, kLogSizeClamp)) * cell;
      const auto clamped = clamp_to_image({cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}, input_side_, input_side_);
      if (!clamped) continue;
      result.push_back({*clamped, softmax(logits), p});
    }
  }
  return result;
}

std::vector<float> TinyDetectorBackend::weights() const {
  std::vector<float> out;
  for (const nn::Param* p : params()) out.insert(out.end(), p->value.begin(), p->value.end());
  return out;
}

void TinyDetectorBackend::set_weights(std::span<const float> weights) {
  std::size_t expected = 0;
  for (const nn::Param* p : params()) expected += p->value.size();
  if (weights.size() != expected) {
    throw SchemaError("tiny_cnn weights blob has " + std::to_string(weights.size()) + " values, expected " +
                      std::to_string(expected));
  }
  std::size_t off = 0;
  for (nn::Param* p : params()) {
    std::copy_n(weights.begin() + static_cast<std::ptrdiff_t>(off), p->value.size(), p->value.begin());
    off += p->value.size();
  }
}

std::unique_ptr<DetectorBackend> TinyDetectorBackend::clone() const {
  return std::make_unique<TinyDetectorBackend>(*this);
}

}  // namespace ovadet
