// Copyright 2026 The codkit Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "codkit/nn.hpp"

#include <cmath>

#include <Eigen/Core>

#include "codkit/error.hpp"

namespace codkit::nn {

namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>>;
using ConstMapVec = Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>>;

void fill_normal(Tensor& t, double std, Rng& rng) {
  for (auto& v : t.data) v = static_cast<Real>(rng.normal() * std);
}

}  // namespace

int conv_out_size(int in, int kernel, int stride, int pad) { return (in + 2 * pad - kernel) / stride + 1; }

Conv2d Conv2d::create(int in, int out, int kernel, int stride, double init_std, Rng& rng) {
  Conv2d c;
  c.in = in;
  c.out = out;
  c.kernel = kernel;
  c.stride = stride;
  c.pad = kernel / 2;
  c.weight = Tensor({out, in * kernel * kernel});
  c.bias = Tensor({out});
  if (init_std <= 0) init_std = std::sqrt(2.0 / (in * kernel * kernel));
  fill_normal(c.weight, init_std, rng);
  return c;
}

Conv2d Conv2d::zeros_like() const {
  Conv2d c = *this;
  c.weight.fill(0);
  c.bias.fill(0);
  return c;
}

Tensor conv_forward(const Conv2d& conv, const Tensor& x, ConvCache* cache) {
  if (x.shape.size() != 3 || x.dim(0) != conv.in) throw InvalidInput("conv input channel mismatch");
  const int h = x.dim(1), w = x.dim(2), k = conv.kernel;
  const int oh = conv_out_size(h, k, conv.stride, conv.pad);
  const int ow = conv_out_size(w, k, conv.stride, conv.pad);
  const int rows = conv.in * k * k, cols = oh * ow;

  Tensor local;
  Tensor& col = cache ? cache->columns : local;
  col = Tensor({rows, cols});
  if (k == 1 && conv.stride == 1 && conv.pad == 0) {
    col.data = x.data;
  } else {
    for (int c = 0; c < conv.in; ++c)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          Real* dst = col.ptr() + static_cast<std::size_t>((c * k + ky) * k + kx) * cols;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * conv.stride - conv.pad + ky;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * conv.stride - conv.pad + kx;
              dst[oy * ow + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? x.at(c, iy, ix) : Real(0);
            }
          }
        }
  }
  Tensor y({conv.out, oh, ow});
  MapMat ym(y.ptr(), conv.out, cols);
  ym.noalias() = ConstMapMat(conv.weight.ptr(), conv.out, rows) * ConstMapMat(col.ptr(), rows, cols);
  ym.colwise() += ConstMapVec(conv.bias.ptr(), conv.out);
  if (cache) {
    cache->in_h = h;
    cache->in_w = w;
    cache->out_h = oh;
    cache->out_w = ow;
  }
  return y;
}

Tensor conv_backward(const Conv2d& conv, const ConvCache& cache, const Tensor& dy, Conv2d* grad,
                     bool need_input_grad) {
  const int k = conv.kernel, rows = conv.in * k * k, cols = cache.out_h * cache.out_w;
  ConstMapMat dym(dy.ptr(), conv.out, cols);
  ConstMapMat colm(cache.columns.ptr(), rows, cols);
  if (grad) {
    MapMat(grad->weight.ptr(), conv.out, rows).noalias() += dym * colm.transpose();
    MapVec(grad->bias.ptr(), conv.out) += dym.rowwise().sum();
  }
  if (!need_input_grad) return {};
  RowMat dcol = ConstMapMat(conv.weight.ptr(), conv.out, rows).transpose() * dym;
  Tensor dx({conv.in, cache.in_h, cache.in_w});
  if (k == 1 && conv.stride == 1 && conv.pad == 0) {
    std::copy(dcol.data(), dcol.data() + dcol.size(), dx.ptr());
    return dx;
  }
  const int oh = cache.out_h, ow = cache.out_w, h = cache.in_h, w = cache.in_w;
  for (int c = 0; c < conv.in; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Real* src = dcol.data() + static_cast<std::size_t>((c * k + ky) * k + kx) * cols;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * conv.stride - conv.pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * conv.stride - conv.pad + kx;
            if (ix >= 0 && ix < w) dx.at(c, iy, ix) += src[oy * ow + ox];
          }
        }
      }
  return dx;
}

Linear Linear::create(int in, int out, double init_std, Rng& rng) {
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = Tensor({out, in});
  l.bias = Tensor({out});
  if (init_std <= 0) init_std = std::sqrt(2.0 / in);
  fill_normal(l.weight, init_std, rng);
  return l;
}

Linear Linear::zeros_like() const {
  Linear l = *this;
  l.weight.fill(0);
  l.bias.fill(0);
  return l;
}

Tensor linear_forward(const Linear& layer, const Tensor& x) {
  if (x.shape.size() != 2 || x.dim(1) != layer.in) throw InvalidInput("linear input width mismatch");
  const int rows = x.dim(0);
  Tensor y({rows, layer.out});
  if (rows == 0) return y;
  MapMat ym(y.ptr(), rows, layer.out);
  ym.noalias() = ConstMapMat(x.ptr(), rows, layer.in) *
                 ConstMapMat(layer.weight.ptr(), layer.out, layer.in).transpose();
  ym.rowwise() += ConstMapVec(layer.bias.ptr(), layer.out).transpose();
  return y;
}

Tensor linear_backward(const Linear& layer, const Tensor& x, const Tensor& dy, Linear* grad,
                       bool need_input_grad) {
  const int rows = x.dim(0);
  Tensor dx;
  if (need_input_grad) dx = Tensor({rows, layer.in});
  if (rows == 0) return dx;
  ConstMapMat dym(dy.ptr(), rows, layer.out);
  ConstMapMat xm(x.ptr(), rows, layer.in);
  if (grad) {
    MapMat(grad->weight.ptr(), layer.out, layer.in).noalias() += dym.transpose() * xm;
    MapVec(grad->bias.ptr(), layer.out) += dym.colwise().sum().transpose();
  }
  if (need_input_grad) {
    MapMat(dx.ptr(), rows, layer.in).noalias() =
        dym * ConstMapMat(layer.weight.ptr(), layer.out, layer.in);
  }
  return dx;
}

void relu_inplace(Tensor& x) {
  for (auto& v : x.data) v = v > 0 ? v : Real(0);
}

void relu_backward(const Tensor& y, Tensor& dy) {
  for (std::size_t i = 0; i < dy.size(); ++i)
    if (!(y.data[i] > 0)) dy.data[i] = 0;
}

Tensor maxpool2_forward(const Tensor& x, std::vector<int>* argmax) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2), oh = h / 2, ow = w / 2;
  Tensor y({c, oh, ow});
  if (argmax) argmax->assign(y.size(), 0);
  std::size_t o = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox, ++o) {
        int best = (ch * h + 2 * oy) * w + 2 * ox;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int idx = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
            if (x.data[idx] > x.data[best]) best = idx;
          }
        y.data[o] = x.data[best];
        if (argmax) (*argmax)[o] = best;
      }
  return y;
}

Tensor maxpool2_backward(const Tensor& x_shape_like, const std::vector<int>& argmax, const Tensor& dy) {
  Tensor dx(x_shape_like.shape);
  for (std::size_t o = 0; o < dy.size(); ++o) dx.data[argmax[o]] += dy.data[o];
  return dx;
}

namespace {

struct BilinearTap {
  int idx[4];
  Real weight[4];
};

// Bilinear taps at (y, x) on an h x w plane; all-zero weights outside.
BilinearTap bilinear_taps(double y, double x, int h, int w) {
  BilinearTap t{{0, 0, 0, 0}, {0, 0, 0, 0}};
  if (y < -1.0 || y > h || x < -1.0 || x > w) return t;
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  int y0 = static_cast<int>(y), x0 = static_cast<int>(x), y1, x1;
  if (y0 >= h - 1) {
    y0 = y1 = h - 1;
    y = y0;
  } else {
    y1 = y0 + 1;
  }
  if (x0 >= w - 1) {
    x0 = x1 = w - 1;
    x = x0;
  } else {
    x1 = x0 + 1;
  }
  const double ly = y - y0, lx = x - x0, hy = 1.0 - ly, hx = 1.0 - lx;
  t.idx[0] = y0 * w + x0;
  t.idx[1] = y0 * w + x1;
  t.idx[2] = y1 * w + x0;
  t.idx[3] = y1 * w + x1;
  t.weight[0] = static_cast<Real>(hy * hx);
  t.weight[1] = static_cast<Real>(hy * lx);
  t.weight[2] = static_cast<Real>(ly * hx);
  t.weight[3] = static_cast<Real>(ly * lx);
  return t;
}

// Taps for every sample point of one roi, bin-major: pooled*pooled bins each
// with sampling*sampling points.
std::vector<BilinearTap> roi_taps(const Box& roi, double scale, int pooled, int sampling, int h, int w) {
  const double x0 = roi.x_min * scale - 0.5, y0 = roi.y_min * scale - 0.5;
  const double bin_w = (roi.x_max - roi.x_min) * scale / pooled;
  const double bin_h = (roi.y_max - roi.y_min) * scale / pooled;
  std::vector<BilinearTap> taps;
  taps.reserve(static_cast<std::size_t>(pooled * pooled * sampling * sampling));
  for (int py = 0; py < pooled; ++py)
    for (int px = 0; px < pooled; ++px)
      for (int sy = 0; sy < sampling; ++sy)
        for (int sx = 0; sx < sampling; ++sx) {
          const double y = y0 + (py + (sy + 0.5) / sampling) * bin_h;
          const double x = x0 + (px + (sx + 0.5) / sampling) * bin_w;
          taps.push_back(bilinear_taps(y, x, h, w));
        }
  return taps;
}

}  // namespace

Tensor roi_align_forward(const Tensor& features, std::span<const Box> rois, double spatial_scale,
                         int pooled, int sampling) {
  const int c = features.dim(0), h = features.dim(1), w = features.dim(2);
  const int bins = pooled * pooled, per_bin = sampling * sampling;
  const Real inv = Real(1) / static_cast<Real>(per_bin);
  Tensor out({static_cast<int>(rois.size()), c * bins});
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const auto taps = roi_taps(rois[r], spatial_scale, pooled, sampling, h, w);
    Real* row = out.ptr() + r * static_cast<std::size_t>(c * bins);
    for (int ch = 0; ch < c; ++ch) {
      const Real* plane = features.ptr() + static_cast<std::size_t>(ch) * h * w;
      for (int b = 0; b < bins; ++b) {
        Real acc = 0;
        for (int s = 0; s < per_bin; ++s) {
          const auto& t = taps[b * per_bin + s];
          acc += t.weight[0] * plane[t.idx[0]] + t.weight[1] * plane[t.idx[1]] +
                 t.weight[2] * plane[t.idx[2]] + t.weight[3] * plane[t.idx[3]];
        }
        row[ch * bins + b] = acc * inv;
      }
    }
  }
  return out;
}

void roi_align_backward(const Tensor& features_shape_like, std::span<const Box> rois,
                        double spatial_scale, int pooled, int sampling, const Tensor& dy,
                        Tensor& dfeatures) {
  const int c = features_shape_like.dim(0), h = features_shape_like.dim(1), w = features_shape_like.dim(2);
  const int bins = pooled * pooled, per_bin = sampling * sampling;
  const Real inv = Real(1) / static_cast<Real>(per_bin);
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const auto taps = roi_taps(rois[r], spatial_scale, pooled, sampling, h, w);
    const Real* row = dy.ptr() + r * static_cast<std::size_t>(c * bins);
    for (int ch = 0; ch < c; ++ch) {
      Real* plane = dfeatures.ptr() + static_cast<std::size_t>(ch) * h * w;
      for (int b = 0; b < bins; ++b) {
        const Real g = row[ch * bins + b] * inv;
        if (g == 0) continue;
        for (int s = 0; s < per_bin; ++s) {
          const auto& t = taps[b * per_bin + s];
          for (int q = 0; q < 4; ++q) plane[t.idx[q]] += t.weight[q] * g;
        }
      }
    }
  }
}

}  // namespace codkit::nn
