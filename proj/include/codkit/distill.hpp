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
#include <string>
#include <vector>

#include "codkit/detector.hpp"
#include "codkit/geometry.hpp"
#include "codkit/random.hpp"

namespace codkit {

enum class RoiLossKind { kMse, kHuber };

std::string to_string(RoiLossKind kind);
RoiLossKind roi_loss_kind_from_string(const std::string& name);

struct DistillConfig {
  bool enable_feature = true;
  bool enable_rpn = true;
  bool enable_roi = true;
  RoiLossKind roi_loss_kind = RoiLossKind::kMse;
  double huber_delta = 1.0;
  bool selective = false;
  double selective_iou_threshold = 0.5;
  int pool_size = 128;
  int sample_size = 64;
  double lambda_feature = 1.0;
  double lambda_rpn = 1.0;
  double lambda_roi = 1.0;
  bool distill_roi_deltas = true;  // also distill the old-class box deltas

  // Throws ConfigError when an invariant is violated.
  void validate() const;

  // MSE everywhere, no filtering.
  static DistillConfig faster_ilod();
  // Selective filtering plus a Huber ROI loss.
  static DistillConfig selective_huber();
};

// Huber penalty of the difference x - y; throws InvalidInput on non-finite input.
double huber(double x, double y, double delta);
// Derivative of huber(x, y, delta) with respect to x.
double huber_grad(double x, double y, double delta);

// Mean squared error over all elements. When \p student_grad is given,
// weight * dL/dstudent is added to it.
double feature_distill_loss(const Tensor& teacher, const Tensor& student, Tensor* student_grad = nullptr,
                            double weight = 1.0);

// MSE over all objectness logits plus MSE over all box deltas.
double rpn_distill_loss(const RpnOutputs& teacher, const RpnOutputs& student, RpnOutputs* student_grad = nullptr,
                        double weight = 1.0);

// Top pool_size proposals, optionally minus those overlapping a current
// ground truth, then a uniform subsample of at most sample_size. Returned in
// rank order.
std::vector<Box> select_distill_rois(std::span<const Proposal> proposals, std::span<const Annotation> gts,
                                     const DistillConfig& cfg, Rng& rng);

// Compares the student on the teacher's logit range (background + old
// classes) and, if enabled, on the old-class deltas.
double roi_distill_loss(const RoiOutputs& teacher, const RoiOutputs& student, const DistillConfig& cfg,
                        RoiOutputs* student_grad = nullptr, double weight = 1.0);

struct DistillBreakdown {
  double feature = 0.0;
  double rpn = 0.0;
  double roi = 0.0;
  std::size_t roi_count = 0;
  double total() const { return feature + rpn + roi; }
};

// Weighted distillation terms for a student pass whose proposals are already
// known. Gradients go into the student pass buffers.
DistillBreakdown distill_step(const DetectorState& teacher, DetectorPass& student,
                              std::span<const Proposal> student_proposals, std::span<const Annotation> gts,
                              const DistillConfig& cfg, Rng& rng);

// Standalone evaluation: builds both passes on \p image.
DistillBreakdown total_distill_loss(const DetectorState& teacher, const DetectorState& student, const Image& image,
                                    std::span<const Annotation> gts, const DistillConfig& cfg, Rng& rng);

}  // namespace codkit
