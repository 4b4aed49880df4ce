#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ovadet/random.hpp"

// Minimal CPU building blocks for the reference backends: single-sample CHW tensors, 3x3/1x1
// convolution through im2col + GEMM, ReLU, 2x2 max pooling, and Adam.
namespace ovadet::nn {

struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int channels, int height, int width)
      : c(channels), h(height), w(width), data(static_cast<std::size_t>(channels) * height * width, 0.0f) {}

  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  float& at(int ch, int y, int x) { return data[ch * plane() + static_cast<std::size_t>(y) * w + x]; }
  float at(int ch, int y, int x) const { return data[ch * plane() + static_cast<std::size_t>(y) * w + x]; }
};

/// A trainable parameter block with its gradient and Adam moments.
struct Param {
  std::vector<float> value;
  std::vector<float> grad;
  std::vector<float> m;
  std::vector<float> v;

  explicit Param(std::size_t n = 0) : value(n, 0.0f), grad(n, 0.0f), m(n, 0.0f), v(n, 0.0f) {}
};

/// Square-kernel convolution, stride 1, zero padding k/2 (same-size output).
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel);

  /// He-normal weights, zero bias.
  void init(Rng& rng);

  int in_channels() const noexcept { return in_; }
  int out_channels() const noexcept { return out_; }
  int kernel() const noexcept { return k_; }

  /// `col` receives the im2col matrix needed by backward; pass nullptr for inference.
  Tensor forward(const Tensor& x, std::vector<float>* col = nullptr) const;
  /// Accumulates weight/bias gradients and returns the gradient w.r.t. the input.
  Tensor backward(const Tensor& dy, std::span<const float> col, int in_h, int in_w, bool need_input_grad = true);

  Param weight;
  Param bias;

 private:
  int in_ = 0;
  int out_ = 0;
  int k_ = 1;
};

void relu_inplace(Tensor& x);
/// Zeroes gradient where the forward output was non-positive.
void relu_backward(Tensor& dy, const Tensor& y);

/// 2x2 max pool, stride 2. `argmax` records the winning input offset for backward.
Tensor maxpool2(const Tensor& x, std::vector<std::uint32_t>* argmax = nullptr);
Tensor maxpool2_backward(const Tensor& dy, std::span<const std::uint32_t> argmax, int in_c, int in_h, int in_w);

/// Non-overlapping average pooling by an integer factor.
Tensor avgpool(const Tensor& x, int factor);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamOptions opt) : opt_(opt) {}
  /// One update over every parameter using its accumulated gradient (scaled by `grad_scale`),
  /// then clears the gradients.
  void step(std::span<Param* const> params, double grad_scale = 1.0);

 private:
  AdamOptions opt_;
  long long t_ = 0;
};

/// Global L2 norm of accumulated gradients.
double grad_norm(std::span<Param* const> params);

}  // namespace ovadet::nn
