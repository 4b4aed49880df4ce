#include "ovadet/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

namespace ovadet::nn {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

// col has (c*k*k) rows and (h*w) columns.
void im2col(const Tensor& x, int k, std::vector<float>& col) {
  const int pad = k / 2;
  const std::size_t hw = x.plane();
  col.assign(static_cast<std::size_t>(x.c) * k * k * hw, 0.0f);
  for (int c = 0; c < x.c; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* dst = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * hw;
        for (int y = 0; y < x.h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= x.h) continue;
          const float* src = x.data.data() + c * hw + static_cast<std::size_t>(sy) * x.w;
          float* out = dst + static_cast<std::size_t>(y) * x.w;
          const int x_lo = std::max(0, pad - kx);
          const int x_hi = std::min(x.w, x.w + pad - kx);
          for (int xx = x_lo; xx < x_hi; ++xx) out[xx] = src[xx + kx - pad];
        }
      }
    }
  }
}

void col2im(std::span<const float> col, int c_in, int k, int h, int w, Tensor& dx) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* src = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          float* out = dx.data.data() + c * hw + static_cast<std::size_t>(sy) * w;
          const float* in = src + static_cast<std::size_t>(y) * w;
          const int x_lo = std::max(0, pad - kx);
          const int x_hi = std::min(w, w + pad - kx);
          for (int xx = x_lo; xx < x_hi; ++xx) out[xx + kx - pad] += in[xx];
        }
      }
    }
  }
}

}  // namespace

Conv2d::Conv2d(int in_channels, int out_channels, int kernel)
    : weight(static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel),
      bias(static_cast<std::size_t>(out_channels)),
      in_(in_channels),
      out_(out_channels),
      k_(kernel) {}

void Conv2d::init(Rng& rng) {
  const double stddev = std::sqrt(2.0 / (static_cast<double>(in_) * k_ * k_));
  for (float& w : weight.value) w = static_cast<float>(rng.normal() * stddev);
  std::fill(bias.value.begin(), bias.value.end(), 0.0f);
}

Tensor Conv2d::forward(const Tensor& x, std::vector<float>* col) const {
  std::vector<float> local;
  std::vector<float>& buf = col ? *col : local;
  const int kk = in_ * k_ * k_;
  const auto hw = static_cast<Eigen::Index>(x.plane());
  const float* input = nullptr;
  if (k_ == 1) {
    // A 1x1 convolution reads the input directly.
    if (col) buf = x.data;
    input = col ? buf.data() : x.data.data();
  } else {
    im2col(x, k_, buf);
    input = buf.data();
  }
  Tensor y(out_, x.h, x.w);
  ConstMapMatrix w(weight.value.data(), out_, kk);
  ConstMapMatrix c(input, kk, hw);
  MapMatrix out(y.data.data(), out_, hw);
  out.noalias() = w * c;
  for (int o = 0; o < out_; ++o) out.row(o).array() += bias.value[static_cast<std::size_t>(o)];
  return y;
}

Tensor Conv2d::backward(const Tensor& dy, std::span<const float> col, int in_h, int in_w, bool need_input_grad) {
  const int kk = in_ * k_ * k_;
  const auto hw = static_cast<Eigen::Index>(dy.plane());
  ConstMapMatrix g(dy.data.data(), out_, hw);
  ConstMapMatrix c(col.data(), kk, hw);
  MapMatrix dw(weight.grad.data(), out_, kk);
  dw.noalias() += g * c.transpose();
  for (int o = 0; o < out_; ++o) bias.grad[static_cast<std::size_t>(o)] += g.row(o).sum();

  Tensor dx;
  if (!need_input_grad) return dx;
  dx = Tensor(in_, in_h, in_w);
  ConstMapMatrix w(weight.value.data(), out_, kk);
  if (k_ == 1) {
    MapMatrix d(dx.data.data(), kk, hw);
    d.noalias() = w.transpose() * g;
  } else {
    std::vector<float> dcol(static_cast<std::size_t>(kk) * static_cast<std::size_t>(hw));
    MapMatrix d(dcol.data(), kk, hw);
    d.noalias() = w.transpose() * g;
    col2im(dcol, in_, k_, in_h, in_w, dx);
  }
  return dx;
}

void relu_inplace(Tensor& x) {
  for (float& v : x.data) v = v > 0.0f ? v : 0.0f;
}

void relu_backward(Tensor& dy, const Tensor& y) {
  for (std::size_t i = 0; i < dy.data.size(); ++i) {
    if (y.data[i] <= 0.0f) dy.data[i] = 0.0f;
  }
}

Tensor maxpool2(const Tensor& x, std::vector<std::uint32_t>* argmax) {
  Tensor y(x.c, x.h / 2, x.w / 2);
  if (argmax) argmax->assign(y.data.size(), 0);
  std::size_t o = 0;
  for (int c = 0; c < x.c; ++c) {
    for (int yy = 0; yy < y.h; ++yy) {
      for (int xx = 0; xx < y.w; ++xx, ++o) {
        float best = -std::numeric_limits<float>::infinity();
        std::uint32_t best_idx = 0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const auto idx = static_cast<std::uint32_t>(c * x.plane() + static_cast<std::size_t>(2 * yy + dy) * x.w + 2 * xx + dx);
            if (x.data[idx] > best) {
              best = x.data[idx];
              best_idx = idx;
            }
          }
        }
        y.data[o] = best;
        if (argmax) (*argmax)[o] = best_idx;
      }
    }
  }
  return y;
}

Tensor maxpool2_backward(const Tensor& dy, std::span<const std::uint32_t> argmax, int in_c, int in_h, int in_w) {
  Tensor dx(in_c, in_h, in_w);
  for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[argmax[i]] += dy.data[i];
  return dx;
}

Tensor avgpool(const Tensor& x, int factor) {
  Tensor y(x.c, x.h / factor, x.w / factor);
  const float inv = 1.0f / static_cast<float>(factor * factor);
  for (int c = 0; c < x.c; ++c) {
    for (int yy = 0; yy < y.h; ++yy) {
      for (int xx = 0; xx < y.w; ++xx) {
        float sum = 0.0f;
        for (int dy = 0; dy < factor; ++dy) {
          for (int dx = 0; dx < factor; ++dx) sum += x.at(c, yy * factor + dy, xx * factor + dx);
        }
        y.at(c, yy, xx) = sum * inv;
      }
    }
  }
  return y;
}

void Adam::step(std::span<Param* const> params, double grad_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  const auto b1 = static_cast<float>(opt_.beta1);
  const auto b2 = static_cast<float>(opt_.beta2);
  const auto step = static_cast<float>(opt_.learning_rate / bc1);
  const auto scale = static_cast<float>(grad_scale);
  const auto inv_bc2 = static_cast<float>(1.0 / bc2);
  const auto eps = static_cast<float>(opt_.eps);
  for (Param* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const float g = p->grad[i] * scale;
      p->m[i] = b1 * p->m[i] + (1.0f - b1) * g;
      p->v[i] = b2 * p->v[i] + (1.0f - b2) * g * g;
      p->value[i] -= step * p->m[i] / (std::sqrt(p->v[i] * inv_bc2) + eps);
      p->grad[i] = 0.0f;
    }
  }
}

double grad_norm(std::span<Param* const> params) {
  double sum = 0.0;
  for (const Param* p : params) {
    for (float g : p->grad) sum += static_cast<double>(g) * g;
  }
  return std::sqrt(sum);
}

}  // namespace ovadet::nn
