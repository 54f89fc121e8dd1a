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

#include "codkit/distill.hpp"

#include <algorithm>
#include <cmath>

#include "codkit/error.hpp"

namespace codkit {

std::string to_string(RoiLossKind kind) { return kind == RoiLossKind::kMse ? "mse" : "huber"; }

RoiLossKind roi_loss_kind_from_string(const std::string& name) {
  if (name == "mse") return RoiLossKind::kMse;
  if (name == "huber") return RoiLossKind::kHuber;
  throw ConfigError("unknown roi loss kind '" + name + "' (expected mse or huber)");
}

void DistillConfig::validate() const {
  if (!(huber_delta > 0.0) || !std::isfinite(huber_delta)) throw ConfigError("huber_delta must be positive");
  if (!(selective_iou_threshold > 0.0 && selective_iou_threshold <= 1.0)) {
    throw ConfigError("selective_iou_threshold must lie in (0, 1]");
  }
  if (pool_size < 0 || sample_size < 0) throw ConfigError("pool_size and sample_size must be non-negative");
  if (sample_size > pool_size) throw ConfigError("sample_size must not exceed pool_size");
  if (lambda_feature < 0.0 || lambda_rpn < 0.0 || lambda_roi < 0.0) throw ConfigError("loss weights must be >= 0");
}

DistillConfig DistillConfig::faster_ilod() { return {}; }

DistillConfig DistillConfig::selective_huber() {
  DistillConfig c;
  c.roi_loss_kind = RoiLossKind::kHuber;
  c.selective = true;
  return c;
}

double huber(double x, double y, double delta) {
  if (!std::isfinite(x) || !std::isfinite(y)) throw InvalidInput("huber: non-finite input");
  const double d = std::abs(x - y);
  return d < delta ? 0.5 * d * d : delta * (d - 0.5 * delta);
}

double huber_grad(double x, double y, double delta) {
  const double d = x - y;
  return std::abs(d) < delta ? d : (d > 0 ? delta : -delta);
}

namespace {

double elem_loss(RoiLossKind kind, double s, double t, double delta, double* grad) {
  if (kind == RoiLossKind::kMse) {
    *grad = 2.0 * (s - t);
    return (s - t) * (s - t);
  }
  *grad = huber_grad(s, t, delta);
  return huber(s, t, delta);
}

double mse(std::span<const Real> t, std::span<const Real> s, std::span<Real> grad, double weight) {
  if (t.empty()) return 0.0;
  const double n = static_cast<double>(t.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double d = static_cast<double>(s[i]) - t[i];
    acc += d * d;
    if (!grad.empty()) grad[i] += static_cast<Real>(weight * 2.0 * d / n);
  }
  return acc / n;
}

}  // namespace

double feature_distill_loss(const Tensor& teacher, const Tensor& student, Tensor* student_grad, double weight) {
  if (!teacher.same_shape(student)) throw InvalidInput("feature distillation: shape mismatch");
  std::span<Real> g;
  if (student_grad) {
    if (!student_grad->same_shape(student)) throw InvalidInput("feature distillation: gradient shape mismatch");
    g = student_grad->span();
  }
  return weight * mse(teacher.span(), student.span(), g, weight);
}

double rpn_distill_loss(const RpnOutputs& teacher, const RpnOutputs& student, RpnOutputs* student_grad,
                        double weight) {
  if (teacher.objectness.size() != student.objectness.size() || teacher.deltas.size() != student.deltas.size() ||
      teacher.feat_h != student.feat_h || teacher.feat_w != student.feat_w ||
      teacher.per_cell != student.per_cell) {
    throw InvalidInput("rpn distillation: anchor layout mismatch");
  }
  std::span<Real> go, gd;
  if (student_grad) {
    go = student_grad->objectness;
    gd = student_grad->deltas;
  }
  return weight * (mse(teacher.objectness, student.objectness, go, weight) +
                   mse(teacher.deltas, student.deltas, gd, weight));
}

std::vector<Box> select_distill_rois(std::span<const Proposal> proposals, std::span<const Annotation> gts,
                                     const DistillConfig& cfg, Rng& rng) {
  const std::size_t pool = std::min(proposals.size(), static_cast<std::size_t>(cfg.pool_size));
  std::vector<std::size_t> admissible;
  for (std::size_t i = 0; i < pool; ++i) {
    bool keep = true;
    if (cfg.selective) {
      for (const auto& g : gts) {
        if (iou_unchecked(proposals[i].box, g.box) > cfg.selective_iou_threshold) {
          keep = false;
          break;
        }
      }
    }
    if (keep) admissible.push_back(i);
  }
  auto pick = rng.sample(admissible.size(), std::min(admissible.size(), static_cast<std::size_t>(cfg.sample_size)));
  std::sort(pick.begin(), pick.end());
  std::vector<Box> rois;
  rois.reserve(pick.size());
  for (const auto i : pick) rois.push_back(proposals[admissible[i]].box);
  return rois;
}

double roi_distill_loss(const RoiOutputs& teacher, const RoiOutputs& student, const DistillConfig& cfg,
                        RoiOutputs* student_grad, double weight) {
  if (teacher.rows != student.rows) throw InvalidInput("roi distillation: roi count mismatch");
  if (teacher.class_count > student.class_count) {
    throw InvalidInput("roi distillation: student logit range is narrower than the teacher's");
  }
  const int rows = teacher.rows;
  if (rows == 0) return 0.0;
  const int tw = teacher.logit_width(), sw = student.logit_width();
  const int td = teacher.delta_width(), sd = student.delta_width();
  const double delta = cfg.huber_delta;
  double grad = 0.0;
  double logit_acc = 0.0;
  const double n_logits = static_cast<double>(rows) * tw;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < tw; ++c) {
      const std::size_t si = static_cast<std::size_t>(r) * sw + c;
      logit_acc += elem_loss(cfg.roi_loss_kind, student.logits[si], teacher.logits[static_cast<std::size_t>(r) * tw + c],
                             delta, &grad);
      if (student_grad) student_grad->logits[si] += static_cast<Real>(weight * grad / n_logits);
    }
  double loss = logit_acc / n_logits;
  if (cfg.distill_roi_deltas && td > 0) {
    double delta_acc = 0.0;
    const double n_deltas = static_cast<double>(rows) * td;
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < td; ++j) {
        const std::size_t si = static_cast<std::size_t>(r) * sd + j;
        delta_acc += elem_loss(cfg.roi_loss_kind, student.deltas[si],
                               teacher.deltas[static_cast<std::size_t>(r) * td + j], delta, &grad);
        if (student_grad) student_grad->deltas[si] += static_cast<Real>(weight * grad / n_deltas);
      }
    loss += delta_acc / n_deltas;
  }
  return weight * loss;
}

DistillBreakdown distill_step(const DetectorState& teacher, DetectorPass& student,
                              std::span<const Proposal> student_proposals, std::span<const Annotation> gts,
                              const DistillConfig& cfg, Rng& rng) {
  cfg.validate();
  DistillBreakdown out;
  if (!cfg.enable_feature && !cfg.enable_rpn && !cfg.enable_roi) return out;
  if (teacher.class_count > student.state().class_count) {
    throw ConfigError("teacher covers more classes than the student");
  }
  // The teacher never receives gradients; its pass is only read.
  DetectorPass tpass(teacher, student.input());
  if (cfg.enable_feature && cfg.lambda_feature > 0) {
    out.feature = feature_distill_loss(tpass.features(), student.features(), &student.features_grad(),
                                       cfg.lambda_feature);
  }
  if (cfg.enable_rpn && cfg.lambda_rpn > 0) {
    out.rpn = rpn_distill_loss(tpass.rpn(), student.rpn(), &student.rpn_grad(), cfg.lambda_rpn);
  }
  if (cfg.enable_roi && cfg.lambda_roi > 0) {
    auto rois = select_distill_rois(student_proposals, gts, cfg, rng);
    out.roi_count = rois.size();
    if (!rois.empty()) {
      const auto tc = tpass.run_roi_head(rois);
      const auto sc = student.run_roi_head(std::move(rois));
      out.roi = roi_distill_loss(tpass.roi_outputs(tc), student.roi_outputs(sc), cfg, &student.roi_grad(sc),
                                 cfg.lambda_roi);
    }
  }
  return out;
}

DistillBreakdown total_distill_loss(const DetectorState& teacher, const DetectorState& student, const Image& image,
                                    std::span<const Annotation> gts, const DistillConfig& cfg, Rng& rng) {
  DetectorPass spass(student, image);
  const auto& a = student.arch;
  const auto proposals = spass.propose(a.train_pre_nms, a.train_post_nms, a.rpn_nms);
  return distill_step(teacher, spass, proposals, gts, cfg, rng);
}

}  // namespace codkit
