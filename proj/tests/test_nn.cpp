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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>

#include "codkit/nn.hpp"

using namespace codkit;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = static_cast<Real>(rng.normal());
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
  return s;
}

// Central difference of f with respect to every entry of x, compared with the
// analytic gradient g.
void check_gradient(Tensor& x, const Tensor& g, const std::function<double()>& f, double h = 1e-2,
                    double tol = 2e-2) {
  REQUIRE(x.size() == g.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Real orig = x[i];
    x[i] = orig + static_cast<Real>(h);
    const double up = f();
    x[i] = orig - static_cast<Real>(h);
    const double down = f();
    x[i] = orig;
    const double fd = (up - down) / (2 * h);
    REQUIRE(std::abs(fd - g[i]) <= tol * std::max(1.0, std::abs(fd)));
  }
}

}  // namespace

TEST_CASE("conv output size") {
  CHECK(nn::conv_out_size(64, 3, 1, 1) == 64);
  CHECK(nn::conv_out_size(64, 3, 2, 1) == 32);
  CHECK(nn::conv_out_size(7, 1, 1, 0) == 7);
}

TEST_CASE("conv gradients match finite differences") {
  Rng rng(1);
  for (const int stride : {1, 2}) {
    auto conv = nn::Conv2d::create(2, 3, 3, stride, 0.5, rng);
    for (auto& b : conv.bias.data) b = static_cast<Real>(rng.normal());
    Tensor x = random_tensor({2, 5, 6}, rng);
    nn::ConvCache cache;
    const Tensor y = nn::conv_forward(conv, x, &cache);
    const Tensor r = random_tensor(y.shape, rng);
    auto grad = conv.zeros_like();
    const Tensor dx = nn::conv_backward(conv, cache, r, &grad, true);
    const auto f = [&] { return dot(nn::conv_forward(conv, x, nullptr), r); };
    check_gradient(x, dx, f);
    check_gradient(conv.weight, grad.weight, f);
    check_gradient(conv.bias, grad.bias, f);
  }
}

TEST_CASE("linear gradients match finite differences") {
  Rng rng(2);
  auto layer = nn::Linear::create(5, 4, 0.5, rng);
  Tensor x = random_tensor({3, 5}, rng);
  const Tensor r = random_tensor({3, 4}, rng);
  auto grad = layer.zeros_like();
  const Tensor dx = nn::linear_backward(layer, x, r, &grad, true);
  const auto f = [&] { return dot(nn::linear_forward(layer, x), r); };
  check_gradient(x, dx, f);
  check_gradient(layer.weight, grad.weight, f);
  check_gradient(layer.bias, grad.bias, f);
}

TEST_CASE("relu and maxpool") {
  Tensor x({1, 2, 2});
  x.data = {-1, 2, 0.5f, -3};
  nn::relu_inplace(x);
  CHECK(x.data == std::vector<Real>{0, 2, 0.5f, 0});
  Tensor dy({1, 2, 2}, 1);
  nn::relu_backward(x, dy);
  CHECK(dy.data == std::vector<Real>{0, 1, 1, 0});

  Rng rng(3);
  Tensor in = random_tensor({2, 5, 4}, rng);
  std::vector<int> argmax;
  const Tensor out = nn::maxpool2_forward(in, &argmax);
  CHECK(out.shape == std::vector<int>{2, 2, 2});
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 2; ++y)
      for (int xx = 0; xx < 2; ++xx) {
        const Real m = std::max({in.at(c, 2 * y, 2 * xx), in.at(c, 2 * y, 2 * xx + 1), in.at(c, 2 * y + 1, 2 * xx),
                                 in.at(c, 2 * y + 1, 2 * xx + 1)});
        CHECK(out.at(c, y, xx) == m);
      }
  const Tensor r = random_tensor(out.shape, rng);
  const Tensor dx = nn::maxpool2_backward(in, argmax, r);
  check_gradient(in, dx, [&] { return dot(nn::maxpool2_forward(in, nullptr), r); }, 1e-3);
}

TEST_CASE("roi align on a constant map returns the constant") {
  Tensor f({2, 8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) f.at(0, y, x) = 3, f.at(1, y, x) = -1;
  const std::vector<Box> rois{{4, 4, 20, 28}, {0, 0, 32, 32}};
  const Tensor out = nn::roi_align_forward(f, rois, 0.25, 2, 2);
  CHECK(out.shape == std::vector<int>{2, 8});
  for (int r = 0; r < 2; ++r)
    for (int k = 0; k < 8; ++k) CHECK(out[r * 8 + k] == doctest::Approx(k < 4 ? 3.0 : -1.0));
}

TEST_CASE("roi align reproduces a linear ramp") {
  Tensor f({1, 8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) f.at(0, y, x) = static_cast<Real>(x);
  // The box maps to feature columns [1.5, 3.5) after the half-pixel shift.
  const std::vector<Box> rois{{8, 8, 16, 16}};
  const Tensor out = nn::roi_align_forward(f, rois, 0.25, 2, 2);
  CHECK(out[0] == doctest::Approx(2.0));
  CHECK(out[1] == doctest::Approx(3.0));
}

TEST_CASE("roi align gradients match finite differences") {
  Rng rng(4);
  Tensor f = random_tensor({2, 6, 7}, rng);
  const std::vector<Box> rois{{2.3, 1.1, 17.9, 15.2}, {0, 0, 27, 23}, {10.5, 6.25, 13.0, 9.0}};
  const Tensor out = nn::roi_align_forward(f, rois, 0.25, 3, 2);
  const Tensor r = random_tensor(out.shape, rng);
  Tensor df(f.shape);
  nn::roi_align_backward(f, rois, 0.25, 3, 2, r, df);
  check_gradient(f, df, [&] { return dot(nn::roi_align_forward(f, rois, 0.25, 3, 2), r); }, 1e-2, 1e-2);
}
