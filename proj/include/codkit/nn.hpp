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

#pragma once

#include <span>
#include <vector>

#include "codkit/geometry.hpp"
#include "codkit/random.hpp"
#include "codkit/tensor.hpp"

// Minimal layers with explicit backward passes. Single image, CHW layout.
namespace codkit::nn {

struct Conv2d {
  int in = 0, out = 0, kernel = 3, stride = 1, pad = 1;
  Tensor weight;  // out x (in * kernel * kernel)
  Tensor bias;    // out

  static Conv2d create(int in, int out, int kernel, int stride, double init_std, Rng& rng);
  Conv2d zeros_like() const;
};

struct ConvCache {
  Tensor columns;  // (in * k * k) x (out_h * out_w)
  int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
};

int conv_out_size(int in, int kernel, int stride, int pad);

Tensor conv_forward(const Conv2d& conv, const Tensor& x, ConvCache* cache);
// Accumulates parameter gradients into \p grad (when non-null) and returns the
// input gradient when \p need_input_grad, else an empty tensor.
Tensor conv_backward(const Conv2d& conv, const ConvCache& cache, const Tensor& dy, Conv2d* grad,
                     bool need_input_grad);

struct Linear {
  int in = 0, out = 0;
  Tensor weight;  // out x in
  Tensor bias;    // out

  static Linear create(int in, int out, double init_std, Rng& rng);
  Linear zeros_like() const;
};

// x is rows x in; result rows x out.
Tensor linear_forward(const Linear& layer, const Tensor& x);
Tensor linear_backward(const Linear& layer, const Tensor& x, const Tensor& dy, Linear* grad,
                       bool need_input_grad);

void relu_inplace(Tensor& x);
// dy *= (y > 0), where y is the ReLU output.
void relu_backward(const Tensor& y, Tensor& dy);

// 2x2 max pooling with stride 2 (floor mode). \p argmax records the flat
// input index of each output element.
Tensor maxpool2_forward(const Tensor& x, std::vector<int>* argmax);
Tensor maxpool2_backward(const Tensor& x_shape_like, const std::vector<int>& argmax, const Tensor& dy);

// Bilinear region pooling with pixel-aligned sampling: box coordinates are
// scaled by \p spatial_scale and shifted by -0.5, each of the pooled x pooled
// bins averages sampling x sampling bilinear samples. Output is
// rois x (C * pooled * pooled).
Tensor roi_align_forward(const Tensor& features, std::span<const Box> rois, double spatial_scale,
                         int pooled, int sampling);
void roi_align_backward(const Tensor& features_shape_like, std::span<const Box> rois,
                        double spatial_scale, int pooled, int sampling, const Tensor& dy,
                        Tensor& dfeatures);

}  // namespace codkit::nn
