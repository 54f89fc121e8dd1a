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

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "codkit/geometry.hpp"
#include "codkit/nn.hpp"
#include "codkit/random.hpp"
#include "codkit/tensor.hpp"

namespace codkit {

struct LayerSpec {
  enum class Kind { kConv, kMaxPool } kind = Kind::kConv;
  int channels = 0;  // conv only
  int stride = 1;    // conv only
  int kernel = 3;    // conv only
};

struct ArchConfig {
  std::string name = "toy";
  int in_channels = 3;
  std::vector<LayerSpec> backbone;
  int rpn_channels = 32;
  std::vector<double> anchor_sizes;
  std::vector<double> anchor_ratios;  // height / width
  int pooled_size = 4;
  int sampling_ratio = 2;
  int fc_dim = 128;
  int fc_layers = 2;

  // Training targets.
  int rpn_batch = 256;
  double rpn_positive_fraction = 0.5;
  double rpn_positive_iou = 0.7;
  double rpn_negative_iou = 0.3;
  int roi_batch = 128;
  double roi_foreground_fraction = 0.25;
  double roi_foreground_iou = 0.5;
  double rpn_smooth_l1_beta = 1.0 / 9.0;
  double roi_smooth_l1_beta = 1.0;
  std::array<double, 4> roi_box_weights{10.0, 10.0, 5.0, 5.0};

  // Proposal generation.
  int train_pre_nms = 600;
  int train_post_nms = 300;
  int test_pre_nms = 600;
  int test_post_nms = 150;
  double rpn_nms = 0.7;
  double min_proposal_size = 1.0;

  int feature_stride() const;
  int feature_channels() const;
  int anchors_per_cell() const { return static_cast<int>(anchor_sizes.size() * anchor_ratios.size()); }
};

// "toy": three-conv stride-4 backbone for 64-128 px inputs.
// "frcnn-vgg16": VGG16 conv5 backbone (stride 16, 512 channels), 128/256/512
// anchors at ratios 0.5/1/2, 7x7 pooling and two 1024-wide FC layers.
ArchConfig arch_preset(const std::string& name);

nlohmann::json to_json(const ArchConfig& arch);
ArchConfig arch_from_json(const nlohmann::json& j);

enum class Component { kBackbone, kRpn, kRoiHead };

struct DetectorParams {
  std::vector<nn::Conv2d> backbone;  // one per conv LayerSpec, in order
  nn::Conv2d rpn_conv, rpn_cls, rpn_bbox;
  std::vector<nn::Linear> fc;
  nn::Linear cls_score;  // (C + 1) x fc_dim, row 0 is background
  nn::Linear bbox_pred;  // 4C x fc_dim, rows 4(c-1)..4(c-1)+3 for class c

  DetectorParams zeros_like() const;
};

struct TrainableFlags {
  bool backbone = true;
  bool rpn = true;
  bool roi_head = true;
  bool enabled(Component c) const {
    return c == Component::kBackbone ? backbone : c == Component::kRpn ? rpn : roi_head;
  }
  friend bool operator==(const TrainableFlags&, const TrainableFlags&) = default;
};

struct DetectorState {
  ArchConfig arch;
  int class_count = 0;  // foreground classes
  DetectorParams params;
  TrainableFlags trainable;
  int task_index = 0;
  std::uint64_t seed = 0;
};

// Frozen copy used as a distillation teacher.
using TeacherSnapshot = std::shared_ptr<const DetectorState>;

// Visit every parameter tensor with its name and owning component.
template <typename Params, typename Fn>
void for_each_param(Params& p, Fn&& fn);

// Pairwise visit of two parameter sets with identical structure.
template <typename Fn>
void for_each_param_pair(DetectorParams& a, const DetectorParams& b, Fn&& fn);

DetectorState build_detector(const ArchConfig& arch, int class_count, std::uint64_t seed);
DetectorState expand_head(const DetectorState& state, int new_class_count);

std::vector<Box> make_anchors(const ArchConfig& arch, int feat_h, int feat_w);

struct RpnOutputs {
  int feat_h = 0, feat_w = 0, per_cell = 0;
  std::vector<Real> objectness;  // one logit per anchor, anchor order (y, x, k)
  std::vector<Real> deltas;      // 4 per anchor

  std::size_t anchor_count() const { return objectness.size(); }
  void zero_like(const RpnOutputs& o) {
    feat_h = o.feat_h, feat_w = o.feat_w, per_cell = o.per_cell;
    objectness.assign(o.objectness.size(), 0);
    deltas.assign(o.deltas.size(), 0);
  }
};

struct Proposal {
  Box box;
  double objectness_logit = 0.0;
};

struct RoiOutputs {
  int rows = 0;
  int class_count = 0;       // C: logits are C+1 wide, deltas 4C wide
  std::vector<Real> logits;  // rows x (C + 1)
  std::vector<Real> deltas;  // rows x 4C

  int logit_width() const { return class_count + 1; }
  int delta_width() const { return 4 * class_count; }
  std::span<const Real> logit_row(int r) const {
    return {logits.data() + static_cast<std::size_t>(r) * logit_width(), static_cast<std::size_t>(logit_width())};
  }
  std::span<const Real> delta_row(int r) const {
    return {deltas.data() + static_cast<std::size_t>(r) * delta_width(), static_cast<std::size_t>(delta_width())};
  }
};

// Standard box parameterization relative to a reference box.
std::array<double, 4> encode_box(const Box& reference, const Box& target, const std::array<double, 4>& weights);
Box decode_box(const Box& reference, std::span<const Real> deltas, const std::array<double, 4>& weights);

// One forward evaluation of a detector on an image, retaining what backward
// needs. Output gradients are accumulated into the *_grad buffers by the loss
// functions; backward() then pushes them into a parameter-gradient set.
class DetectorPass {
 public:
  DetectorPass(const DetectorState& state, const Image& image);

  const DetectorState& state() const { return *state_; }
  const Image& input() const { return input_; }
  const Tensor& features() const { return features_; }
  const RpnOutputs& rpn() const { return rpn_; }
  const std::vector<Box>& anchors() const { return anchors_; }
  int image_height() const { return image_h_; }
  int image_width() const { return image_w_; }

  // Decoded, clipped proposals after top-k and NMS, by descending objectness.
  std::vector<Proposal> propose(int pre_nms_k, int post_nms_k, double nms_threshold) const;

  // Runs the ROI head on \p rois; returns a handle for roi_outputs/roi_grad.
  std::size_t run_roi_head(std::vector<Box> rois);
  const RoiOutputs& roi_outputs(std::size_t call) const { return roi_calls_.at(call).outputs; }
  const std::vector<Box>& roi_boxes(std::size_t call) const { return roi_calls_.at(call).rois; }

  Tensor& features_grad() { return features_grad_; }
  RpnOutputs& rpn_grad() { return rpn_grad_; }
  RoiOutputs& roi_grad(std::size_t call) { return roi_calls_.at(call).grad; }

  // Accumulates parameter gradients of every trainable component into grads.
  void backward(DetectorParams& grads) const;

 private:
  struct RoiCall {
    std::vector<Box> rois;
    Tensor pooled;
    std::vector<Tensor> fc_out;  // post-ReLU activations
    RoiOutputs outputs;
    RoiOutputs grad;
  };

  const DetectorState* state_;
  Image input_;
  int image_h_ = 0, image_w_ = 0;
  std::vector<nn::ConvCache> conv_caches_;
  std::vector<std::vector<int>> pool_argmax_;
  std::vector<Tensor> layer_inputs_;   // input of each backbone layer
  std::vector<Tensor> layer_outputs_;  // output of each backbone layer (post-ReLU)
  Tensor features_;
  nn::ConvCache rpn_conv_cache_, rpn_cls_cache_, rpn_bbox_cache_;
  Tensor rpn_hidden_;
  RpnOutputs rpn_;
  std::vector<Box> anchors_;
  std::vector<RoiCall> roi_calls_;
  Tensor features_grad_;
  RpnOutputs rpn_grad_;
};

struct DetectionLosses {
  double rpn_cls = 0.0;
  double rpn_reg = 0.0;
  double roi_cls = 0.0;
  double roi_reg = 0.0;
  double total() const { return rpn_cls + rpn_reg + roi_cls + roi_reg; }
};

struct AnchorTargets {
  std::vector<int> labels;       // 1 positive, 0 negative, -1 ignored (after sampling)
  std::vector<Real> regression;  // 4 per anchor, meaningful for positives
};

AnchorTargets assign_anchor_targets(const ArchConfig& arch, std::span<const Box> anchors,
                                    std::span<const Annotation> gts, Rng& rng);

struct RoiSample {
  std::vector<Box> rois;
  std::vector<int> labels;               // 0 background, else class id
  std::vector<std::array<Real, 4>> regression;  // meaningful for foreground
};

// Proposals plus ground-truth boxes, labelled at roi_foreground_iou and
// subsampled to roi_batch with at most roi_foreground_fraction foreground.
RoiSample sample_rois(const ArchConfig& arch, std::span<const Proposal> proposals,
                      std::span<const Annotation> gts, Rng& rng);

// Loss terms from already-evaluated outputs; gradients are added to the
// pass's output-gradient buffers (scaled by \p weight).
double rpn_objectness_loss(DetectorPass& pass, const AnchorTargets& targets, double weight = 1.0);
double rpn_regression_loss(DetectorPass& pass, const AnchorTargets& targets, double weight = 1.0);
std::pair<double, double> roi_detection_loss(DetectorPass& pass, std::size_t call,
                                             const RoiSample& sample, double weight = 1.0);

struct TrainStep {
  std::unique_ptr<DetectorPass> pass;
  std::vector<Proposal> proposals;
  RoiSample sampled;
  std::size_t roi_call = 0;
  DetectionLosses losses;
};

// Full detection-loss forward with gradients written into the pass buffers.
// \p fixed_rois, when given, replaces proposal sampling (labels are still
// assigned against \p gts); used to probe gradients with a frozen roi set.
TrainStep forward_train(const DetectorState& state, const Image& image,
                        std::span<const Annotation> gts, Rng& rng,
                        const std::optional<std::vector<Box>>& fixed_rois = std::nullopt);

std::vector<Proposal> propose(const DetectorState& state, const Image& image, int pre_nms_k,
                              int post_nms_k, double nms_threshold);

struct InferenceOptions {
  double score_threshold = 0.05;
  double nms_threshold = 0.5;
  int max_detections = 100;
};

std::vector<Detection> infer(const DetectorState& state, const Image& image, const std::string& image_id,
                             const InferenceOptions& options = {});

struct CheckpointManifest {
  ArchConfig arch;
  int class_count = 0;
  int task_index = 0;
  std::uint64_t seed = 0;
  std::string creation_time;
  std::string blob;  // file name of the parameter blob, relative to the manifest
  TrainableFlags trainable;
};

// Writes <stem>.bin and <stem>.json; returns the manifest path.
std::filesystem::path save_checkpoint(const DetectorState& state, const std::filesystem::path& stem);
DetectorState load_checkpoint(const std::filesystem::path& manifest_path);
CheckpointManifest read_manifest(const std::filesystem::path& manifest_path);

// ---------------------------------------------------------------- templates

template <typename Params, typename Fn>
void for_each_param(Params& p, Fn&& fn) {
  for (std::size_t i = 0; i < p.backbone.size(); ++i) {
    const std::string n = "backbone." + std::to_string(i);
    fn(n + ".weight", Component::kBackbone, p.backbone[i].weight);
    fn(n + ".bias", Component::kBackbone, p.backbone[i].bias);
  }
  fn("rpn.conv.weight", Component::kRpn, p.rpn_conv.weight);
  fn("rpn.conv.bias", Component::kRpn, p.rpn_conv.bias);
  fn("rpn.cls.weight", Component::kRpn, p.rpn_cls.weight);
  fn("rpn.cls.bias", Component::kRpn, p.rpn_cls.bias);
  fn("rpn.bbox.weight", Component::kRpn, p.rpn_bbox.weight);
  fn("rpn.bbox.bias", Component::kRpn, p.rpn_bbox.bias);
  for (std::size_t i = 0; i < p.fc.size(); ++i) {
    const std::string n = "roi.fc" + std::to_string(i);
    fn(n + ".weight", Component::kRoiHead, p.fc[i].weight);
    fn(n + ".bias", Component::kRoiHead, p.fc[i].bias);
  }
  fn("roi.cls.weight", Component::kRoiHead, p.cls_score.weight);
  fn("roi.cls.bias", Component::kRoiHead, p.cls_score.bias);
  fn("roi.bbox.weight", Component::kRoiHead, p.bbox_pred.weight);
  fn("roi.bbox.bias", Component::kRoiHead, p.bbox_pred.bias);
}

template <typename Fn>
void for_each_param_pair(DetectorParams& a, const DetectorParams& b, Fn&& fn) {
  std::vector<const Tensor*> others;
  for_each_param(b, [&](const std::string&, Component, const Tensor& t) { others.push_back(&t); });
  std::size_t i = 0;
  for_each_param(a, [&](const std::string& name, Component c, Tensor& t) { fn(name, c, t, *others[i++]); });
}

}  // namespace codkit
