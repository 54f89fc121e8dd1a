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

#include "codkit/detector.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "codkit/error.hpp"

namespace codkit {

namespace {

constexpr double kMaxLogScale = 4.135166556742356;  // log(1000 / 16)
constexpr std::array<double, 4> kUnitWeights{1.0, 1.0, 1.0, 1.0};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double smooth_l1(double d, double beta, double* grad) {
  const double a = std::abs(d);
  if (beta > 0 && a < beta) {
    *grad = d / beta;
    return 0.5 * d * d / beta;
  }
  *grad = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
  return a - 0.5 * beta;
}

}  // namespace

// ---------------------------------------------------------------- arch

int ArchConfig::feature_stride() const {
  int s = 1;
  for (const auto& l : backbone) s *= l.kind == LayerSpec::Kind::kMaxPool ? 2 : l.stride;
  return s;
}

int ArchConfig::feature_channels() const {
  int c = in_channels;
  for (const auto& l : backbone)
    if (l.kind == LayerSpec::Kind::kConv) c = l.channels;
  return c;
}

ArchConfig arch_preset(const std::string& name) {
  ArchConfig a;
  a.name = name;
  if (name == "toy") {
    a.backbone = {{LayerSpec::Kind::kConv, 16, 2, 3},
                  {LayerSpec::Kind::kConv, 32, 2, 3},
                  {LayerSpec::Kind::kConv, 32, 1, 3}};
    a.rpn_channels = 32;
    a.anchor_sizes = {12.0, 20.0, 28.0};
    a.anchor_ratios = {0.5, 1.0, 2.0};
    a.pooled_size = 4;
    a.sampling_ratio = 2;
    a.fc_dim = 128;
    a.fc_layers = 2;
    return a;
  }
  if (name == "frcnn-vgg16") {
    const auto conv = [](int c) { return LayerSpec{LayerSpec::Kind::kConv, c, 1, 3}; };
    const LayerSpec pool{LayerSpec::Kind::kMaxPool, 0, 2, 2};
    a.backbone = {conv(64),  conv(64),  pool,      conv(128), conv(128), pool,
                  conv(256), conv(256), conv(256), pool,      conv(512), conv(512),
                  conv(512), pool,      conv(512), conv(512), conv(512)};
    a.rpn_channels = 512;
    a.anchor_sizes = {128.0, 256.0, 512.0};
    a.anchor_ratios = {0.5, 1.0, 2.0};
    a.pooled_size = 7;
    a.sampling_ratio = 2;
    a.fc_dim = 1024;
    a.fc_layers = 2;
    a.train_pre_nms = 12000;
    a.train_post_nms = 2000;
    a.test_pre_nms = 6000;
    a.test_post_nms = 1000;
    a.min_proposal_size = 0.0;
    return a;
  }
  throw ConfigError("unknown architecture '" + name + "'");
}

nlohmann::json to_json(const ArchConfig& a) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : a.backbone) {
    if (l.kind == LayerSpec::Kind::kMaxPool) {
      layers.push_back({{"kind", "maxpool"}});
    } else {
      layers.push_back({{"kind", "conv"}, {"channels", l.channels}, {"stride", l.stride}, {"kernel", l.kernel}});
    }
  }
  return {{"name", a.name},
          {"in_channels", a.in_channels},
          {"backbone", layers},
          {"rpn_channels", a.rpn_channels},
          {"anchor_sizes", a.anchor_sizes},
          {"anchor_ratios", a.anchor_ratios},
          {"pooled_size", a.pooled_size},
          {"sampling_ratio", a.sampling_ratio},
          {"fc_dim", a.fc_dim},
          {"fc_layers", a.fc_layers},
          {"rpn_batch", a.rpn_batch},
          {"rpn_positive_fraction", a.rpn_positive_fraction},
          {"rpn_positive_iou", a.rpn_positive_iou},
          {"rpn_negative_iou", a.rpn_negative_iou},
          {"roi_batch", a.roi_batch},
          {"roi_foreground_fraction", a.roi_foreground_fraction},
          {"roi_foreground_iou", a.roi_foreground_iou},
          {"rpn_smooth_l1_beta", a.rpn_smooth_l1_beta},
          {"roi_smooth_l1_beta", a.roi_smooth_l1_beta},
          {"roi_box_weights", a.roi_box_weights},
          {"train_pre_nms", a.train_pre_nms},
          {"train_post_nms", a.train_post_nms},
          {"test_pre_nms", a.test_pre_nms},
          {"test_post_nms", a.test_post_nms},
          {"rpn_nms", a.rpn_nms},
          {"min_proposal_size", a.min_proposal_size}};
}

ArchConfig arch_from_json(const nlohmann::json& j) {
  ArchConfig a;
  try {
    a.name = j.at("name").get<std::string>();
    a.in_channels = j.at("in_channels").get<int>();
    for (const auto& l : j.at("backbone")) {
      if (l.at("kind") == "maxpool") {
        a.backbone.push_back({LayerSpec::Kind::kMaxPool, 0, 2, 2});
      } else {
        a.backbone.push_back({LayerSpec::Kind::kConv, l.at("channels").get<int>(), l.at("stride").get<int>(),
                              l.at("kernel").get<int>()});
      }
    }
    a.rpn_channels = j.at("rpn_channels").get<int>();
    a.anchor_sizes = j.at("anchor_sizes").get<std::vector<double>>();
    a.anchor_ratios = j.at("anchor_ratios").get<std::vector<double>>();
    a.pooled_size = j.at("pooled_size").get<int>();
    a.sampling_ratio = j.at("sampling_ratio").get<int>();
    a.fc_dim = j.at("fc_dim").get<int>();
    a.fc_layers = j.at("fc_layers").get<int>();
    a.rpn_batch = j.at("rpn_batch").get<int>();
    a.rpn_positive_fraction = j.at("rpn_positive_fraction").get<double>();
    a.rpn_positive_iou = j.at("rpn_positive_iou").get<double>();
    a.rpn_negative_iou = j.at("rpn_negative_iou").get<double>();
    a.roi_batch = j.at("roi_batch").get<int>();
    a.roi_foreground_fraction = j.at("roi_foreground_fraction").get<double>();
    a.roi_foreground_iou = j.at("roi_foreground_iou").get<double>();
    a.rpn_smooth_l1_beta = j.at("rpn_smooth_l1_beta").get<double>();
    a.roi_smooth_l1_beta = j.at("roi_smooth_l1_beta").get<double>();
    a.roi_box_weights = j.at("roi_box_weights").get<std::array<double, 4>>();
    a.train_pre_nms = j.at("train_pre_nms").get<int>();
    a.train_post_nms = j.at("train_post_nms").get<int>();
    a.test_pre_nms = j.at("test_pre_nms").get<int>();
    a.test_post_nms = j.at("test_post_nms").get<int>();
    a.rpn_nms = j.at("rpn_nms").get<double>();
    a.min_proposal_size = j.at("min_proposal_size").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed architecture description: ") + e.what());
  }
  return a;
}

// ---------------------------------------------------------------- state

DetectorParams DetectorParams::zeros_like() const {
  DetectorParams z;
  for (const auto& c : backbone) z.backbone.push_back(c.zeros_like());
  z.rpn_conv = rpn_conv.zeros_like();
  z.rpn_cls = rpn_cls.zeros_like();
  z.rpn_bbox = rpn_bbox.zeros_like();
  for (const auto& l : fc) z.fc.push_back(l.zeros_like());
  z.cls_score = cls_score.zeros_like();
  z.bbox_pred = bbox_pred.zeros_like();
  return z;
}

DetectorState build_detector(const ArchConfig& arch, int class_count, std::uint64_t seed) {
  if (class_count < 1) throw ConfigError("class_count must be >= 1");
  if (arch.anchor_sizes.empty() || arch.anchor_ratios.empty()) throw ConfigError("anchor set is empty");
  if (arch.fc_layers < 1) throw ConfigError("ROI head needs at least one FC layer");
  DetectorState s;
  s.arch = arch;
  s.class_count = class_count;
  s.seed = seed;
  Rng rng(seed);
  int ch = arch.in_channels;
  for (const auto& l : arch.backbone) {
    if (l.kind != LayerSpec::Kind::kConv) continue;
    s.params.backbone.push_back(nn::Conv2d::create(ch, l.channels, l.kernel, l.stride, 0.0, rng));
    ch = l.channels;
  }
  const int k = arch.anchors_per_cell();
  s.params.rpn_conv = nn::Conv2d::create(ch, arch.rpn_channels, 3, 1, 0.0, rng);
  s.params.rpn_cls = nn::Conv2d::create(arch.rpn_channels, k, 1, 1, 0.01, rng);
  s.params.rpn_bbox = nn::Conv2d::create(arch.rpn_channels, 4 * k, 1, 1, 0.01, rng);
  int width = ch * arch.pooled_size * arch.pooled_size;
  for (int i = 0; i < arch.fc_layers; ++i) {
    s.params.fc.push_back(nn::Linear::create(width, arch.fc_dim, 0.0, rng));
    width = arch.fc_dim;
  }
  s.params.cls_score = nn::Linear::create(width, class_count + 1, 0.01, rng);
  s.params.bbox_pred = nn::Linear::create(width, 4 * class_count, 0.001, rng);
  return s;
}

DetectorState expand_head(const DetectorState& state, int new_class_count) {
  if (new_class_count <= state.class_count) {
    throw ConfigError("expand_head needs more classes than the current " + std::to_string(state.class_count));
  }
  DetectorState out = state;
  out.class_count = new_class_count;
  Rng rng(mix_seed(state.seed, 1000 + static_cast<std::uint64_t>(new_class_count)));
  const int width = state.params.cls_score.in;
  auto cls = nn::Linear::create(width, new_class_count + 1, 0.01, rng);
  auto bbox = nn::Linear::create(width, 4 * new_class_count, 0.001, rng);
  std::copy(state.params.cls_score.weight.data.begin(), state.params.cls_score.weight.data.end(), cls.weight.data.begin());
  std::copy(state.params.cls_score.bias.data.begin(), state.params.cls_score.bias.data.end(), cls.bias.data.begin());
  std::copy(state.params.bbox_pred.weight.data.begin(), state.params.bbox_pred.weight.data.end(), bbox.weight.data.begin());
  std::copy(state.params.bbox_pred.bias.data.begin(), state.params.bbox_pred.bias.data.end(), bbox.bias.data.begin());
  out.params.cls_score = std::move(cls);
  out.params.bbox_pred = std::move(bbox);
  return out;
}

std::vector<Box> make_anchors(const ArchConfig& arch, int feat_h, int feat_w) {
  const double stride = arch.feature_stride();
  std::vector<Box> anchors;
  anchors.reserve(static_cast<std::size_t>(feat_h) * feat_w * arch.anchors_per_cell());
  for (int y = 0; y < feat_h; ++y)
    for (int x = 0; x < feat_w; ++x) {
      const double cx = (x + 0.5) * stride, cy = (y + 0.5) * stride;
      for (const double size : arch.anchor_sizes)
        for (const double ratio : arch.anchor_ratios) {
          const double w = size / std::sqrt(ratio), h = size * std::sqrt(ratio);
          anchors.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
        }
    }
  return anchors;
}

std::array<double, 4> encode_box(const Box& ref, const Box& target, const std::array<double, 4>& w) {
  const double rw = ref.width(), rh = ref.height();
  const double rx = ref.x_min + 0.5 * rw, ry = ref.y_min + 0.5 * rh;
  const double tw = target.width(), th = target.height();
  const double tx = target.x_min + 0.5 * tw, ty = target.y_min + 0.5 * th;
  return {w[0] * (tx - rx) / rw, w[1] * (ty - ry) / rh, w[2] * std::log(tw / rw), w[3] * std::log(th / rh)};
}

Box decode_box(const Box& ref, std::span<const Real> d, const std::array<double, 4>& w) {
  const double rw = ref.width(), rh = ref.height();
  const double rx = ref.x_min + 0.5 * rw, ry = ref.y_min + 0.5 * rh;
  const double dx = d[0] / w[0], dy = d[1] / w[1];
  const double dw = std::min(static_cast<double>(d[2]) / w[2], kMaxLogScale);
  const double dh = std::min(static_cast<double>(d[3]) / w[3], kMaxLogScale);
  const double cx = rx + dx * rw, cy = ry + dy * rh;
  const double pw = rw * std::exp(dw), ph = rh * std::exp(dh);
  return {cx - 0.5 * pw, cy - 0.5 * ph, cx + 0.5 * pw, cy + 0.5 * ph};
}

// ---------------------------------------------------------------- pass

DetectorPass::DetectorPass(const DetectorState& state, const Image& image) : state_(&state), input_(image) {
  const auto& arch = state.arch;
  if (image.shape.size() != 3 || image.dim(0) != arch.in_channels) {
    throw InvalidInput("image channel count does not match the detector");
  }
  image_h_ = image.dim(1);
  image_w_ = image.dim(2);
  Tensor x = image;
  for (auto& v : x.data) v -= Real(0.5);
  std::size_t conv_i = 0;
  for (const auto& layer : arch.backbone) {
    layer_inputs_.push_back(x);
    if (layer.kind == LayerSpec::Kind::kConv) {
      conv_caches_.emplace_back();
      x = nn::conv_forward(state.params.backbone[conv_i++], x, &conv_caches_.back());
      nn::relu_inplace(x);
      pool_argmax_.emplace_back();
    } else {
      conv_caches_.emplace_back();
      pool_argmax_.emplace_back();
      x = nn::maxpool2_forward(x, &pool_argmax_.back());
    }
    layer_outputs_.push_back(x);
  }
  features_ = std::move(x);
  features_grad_ = Tensor(features_.shape);

  rpn_hidden_ = nn::conv_forward(state.params.rpn_conv, features_, &rpn_conv_cache_);
  nn::relu_inplace(rpn_hidden_);
  const Tensor cls = nn::conv_forward(state.params.rpn_cls, rpn_hidden_, &rpn_cls_cache_);
  const Tensor bbox = nn::conv_forward(state.params.rpn_bbox, rpn_hidden_, &rpn_bbox_cache_);
  const int fh = features_.dim(1), fw = features_.dim(2), k = arch.anchors_per_cell();
  rpn_.feat_h = fh;
  rpn_.feat_w = fw;
  rpn_.per_cell = k;
  rpn_.objectness.resize(static_cast<std::size_t>(fh) * fw * k);
  rpn_.deltas.resize(rpn_.objectness.size() * 4);
  for (int y = 0; y < fh; ++y)
    for (int x2 = 0; x2 < fw; ++x2)
      for (int a = 0; a < k; ++a) {
        const std::size_t idx = (static_cast<std::size_t>(y) * fw + x2) * k + a;
        rpn_.objectness[idx] = cls.at(a, y, x2);
        for (int j = 0; j < 4; ++j) rpn_.deltas[idx * 4 + j] = bbox.at(a * 4 + j, y, x2);
      }
  rpn_grad_.zero_like(rpn_);
  anchors_ = make_anchors(arch, fh, fw);
}

std::vector<Proposal> DetectorPass::propose(int pre_nms_k, int post_nms_k, double nms_threshold) const {
  const double min_size = state_->arch.min_proposal_size;
  std::vector<Proposal> cands;
  cands.reserve(anchors_.size());
  for (std::size_t a = 0; a < anchors_.size(); ++a) {
    const Box b = clip(decode_box(anchors_[a], std::span(rpn_.deltas).subspan(a * 4, 4), kUnitWeights),
                       image_w_, image_h_);
    if (!b.valid() || b.width() < min_size || b.height() < min_size) continue;
    if (!std::isfinite(rpn_.objectness[a])) continue;
    cands.push_back({b, rpn_.objectness[a]});
  }
  std::vector<double> scores(cands.size());
  for (std::size_t i = 0; i < cands.size(); ++i) scores[i] = cands[i].objectness_logit;
  auto order = descending_order(scores);
  if (static_cast<int>(order.size()) > pre_nms_k) order.resize(pre_nms_k);
  std::vector<ScoredBox> top;
  top.reserve(order.size());
  for (const auto i : order) top.push_back({cands[i].box, cands[i].objectness_logit});
  std::vector<Proposal> out;
  for (const auto i : nms(top, nms_threshold)) {
    if (static_cast<int>(out.size()) >= post_nms_k) break;
    out.push_back({top[i].box, top[i].score});
  }
  return out;
}

std::size_t DetectorPass::run_roi_head(std::vector<Box> rois) {
  const auto& arch = state_->arch;
  const auto& p = state_->params;
  RoiCall call;
  call.rois = std::move(rois);
  call.pooled = nn::roi_align_forward(features_, call.rois, 1.0 / arch.feature_stride(), arch.pooled_size,
                                      arch.sampling_ratio);
  const Tensor* x = &call.pooled;
  for (const auto& fc : p.fc) {
    call.fc_out.push_back(nn::linear_forward(fc, *x));
    nn::relu_inplace(call.fc_out.back());
    x = &call.fc_out.back();
  }
  const Tensor logits = nn::linear_forward(p.cls_score, *x);
  const Tensor deltas = nn::linear_forward(p.bbox_pred, *x);
  call.outputs.rows = static_cast<int>(call.rois.size());
  call.outputs.class_count = state_->class_count;
  call.outputs.logits = logits.data;
  call.outputs.deltas = deltas.data;
  call.grad = call.outputs;
  std::fill(call.grad.logits.begin(), call.grad.logits.end(), Real(0));
  std::fill(call.grad.deltas.begin(), call.grad.deltas.end(), Real(0));
  roi_calls_.push_back(std::move(call));
  return roi_calls_.size() - 1;
}

void DetectorPass::backward(DetectorParams& grads) const {
  const auto& arch = state_->arch;
  const auto& p = state_->params;
  const auto& tr = state_->trainable;
  if (!tr.backbone && !tr.rpn && !tr.roi_head) return;
  const bool need_feat = tr.backbone;
  Tensor dfeat = features_grad_;

  // ROI head
  for (const auto& call : roi_calls_) {
    if (call.outputs.rows == 0 || (!tr.roi_head && !need_feat)) continue;
    const int rows = call.outputs.rows;
    Tensor dlog({rows, call.outputs.logit_width()});
    dlog.data = call.grad.logits;
    Tensor ddel({rows, call.outputs.delta_width()});
    ddel.data = call.grad.deltas;
    const Tensor& last = call.fc_out.back();
    Tensor dh = nn::linear_backward(p.cls_score, last, dlog, tr.roi_head ? &grads.cls_score : nullptr, true);
    const Tensor dh2 = nn::linear_backward(p.bbox_pred, last, ddel, tr.roi_head ? &grads.bbox_pred : nullptr, true);
    for (std::size_t i = 0; i < dh.size(); ++i) dh.data[i] += dh2.data[i];
    for (int i = static_cast<int>(p.fc.size()) - 1; i >= 0; --i) {
      nn::relu_backward(call.fc_out[i], dh);
      const Tensor& in = i == 0 ? call.pooled : call.fc_out[i - 1];
      const bool need_in = i > 0 || need_feat;
      dh = nn::linear_backward(p.fc[i], in, dh, tr.roi_head ? &grads.fc[i] : nullptr, need_in);
      if (!need_in) break;
    }
    if (need_feat) {
      nn::roi_align_backward(features_, call.rois, 1.0 / arch.feature_stride(), arch.pooled_size,
                             arch.sampling_ratio, dh, dfeat);
    }
  }

  // RPN
  if (tr.rpn || need_feat) {
    const int fh = rpn_.feat_h, fw = rpn_.feat_w, k = rpn_.per_cell;
    Tensor dcls({k, fh, fw}), dbbox({4 * k, fh, fw});
    for (int y = 0; y < fh; ++y)
      for (int x = 0; x < fw; ++x)
        for (int a = 0; a < k; ++a) {
          const std::size_t idx = (static_cast<std::size_t>(y) * fw + x) * k + a;
          dcls.at(a, y, x) = rpn_grad_.objectness[idx];
          for (int j = 0; j < 4; ++j) dbbox.at(a * 4 + j, y, x) = rpn_grad_.deltas[idx * 4 + j];
        }
    Tensor dh = nn::conv_backward(p.rpn_cls, rpn_cls_cache_, dcls, tr.rpn ? &grads.rpn_cls : nullptr, true);
    const Tensor dh2 = nn::conv_backward(p.rpn_bbox, rpn_bbox_cache_, dbbox, tr.rpn ? &grads.rpn_bbox : nullptr, true);
    for (std::size_t i = 0; i < dh.size(); ++i) dh.data[i] += dh2.data[i];
    nn::relu_backward(rpn_hidden_, dh);
    const Tensor df = nn::conv_backward(p.rpn_conv, rpn_conv_cache_, dh, tr.rpn ? &grads.rpn_conv : nullptr, need_feat);
    if (need_feat)
      for (std::size_t i = 0; i < df.size(); ++i) dfeat.data[i] += df.data[i];
  }

  if (!need_feat) return;
  Tensor d = std::move(dfeat);
  std::size_t conv_i = p.backbone.size();
  for (int li = static_cast<int>(arch.backbone.size()) - 1; li >= 0; --li) {
    if (arch.backbone[li].kind == LayerSpec::Kind::kConv) {
      --conv_i;
      nn::relu_backward(layer_outputs_[li], d);
      d = nn::conv_backward(p.backbone[conv_i], conv_caches_[li], d, &grads.backbone[conv_i], li > 0);
    } else {
      d = nn::maxpool2_backward(layer_inputs_[li], pool_argmax_[li], d);
    }
  }
}

// ---------------------------------------------------------------- targets

AnchorTargets assign_anchor_targets(const ArchConfig& arch, std::span<const Box> anchors,
                                    std::span<const Annotation> gts, Rng& rng) {
  const std::size_t n = anchors.size();
  AnchorTargets t;
  t.labels.assign(n, -1);
  t.regression.assign(n * 4, 0);
  std::vector<double> best(n, 0.0);
  std::vector<int> best_gt(n, -1);
  std::vector<double> gt_best(gts.size(), 0.0);
  std::vector<double> overlaps(n * gts.size());
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double o = iou_unchecked(anchors[a], gts[g].box);
      overlaps[a * gts.size() + g] = o;
      if (o > best[a]) {
        best[a] = o;
        best_gt[a] = static_cast<int>(g);
      }
      gt_best[g] = std::max(gt_best[g], o);
    }
  for (std::size_t a = 0; a < n; ++a) {
    if (best[a] <= arch.rpn_negative_iou) t.labels[a] = 0;
    if (best[a] >= arch.rpn_positive_iou) t.labels[a] = 1;
  }
  // Every ground truth keeps its best-overlapping anchors as positives.
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gt_best[g] <= 0.0) continue;
    for (std::size_t a = 0; a < n; ++a) {
      if (overlaps[a * gts.size() + g] == gt_best[g]) {
        t.labels[a] = 1;
        best_gt[a] = static_cast<int>(g);
      }
    }
  }
  std::vector<std::size_t> pos, neg;
  for (std::size_t a = 0; a < n; ++a) {
    if (t.labels[a] == 1) pos.push_back(a);
    if (t.labels[a] == 0) neg.push_back(a);
  }
  const auto max_pos = static_cast<std::size_t>(arch.rpn_batch * arch.rpn_positive_fraction);
  std::vector<int> sampled(n, -1);
  const auto keep_pos = rng.sample(pos.size(), std::min(max_pos, pos.size()));
  for (const auto i : keep_pos) sampled[pos[i]] = 1;
  const std::size_t n_neg = std::min(neg.size(), static_cast<std::size_t>(arch.rpn_batch) - keep_pos.size());
  for (const auto i : rng.sample(neg.size(), n_neg)) sampled[neg[i]] = 0;
  t.labels = std::move(sampled);
  for (std::size_t a = 0; a < n; ++a) {
    if (t.labels[a] != 1) continue;
    const auto e = encode_box(anchors[a], gts[best_gt[a]].box, kUnitWeights);
    for (int j = 0; j < 4; ++j) t.regression[a * 4 + j] = static_cast<Real>(e[j]);
  }
  return t;
}

namespace {

void label_rois(const ArchConfig& arch, const std::vector<Box>& rois, std::span<const Annotation> gts,
                std::vector<int>& labels, std::vector<int>& matched) {
  labels.assign(rois.size(), 0);
  matched.assign(rois.size(), -1);
  for (std::size_t r = 0; r < rois.size(); ++r) {
    double best = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double o = iou_unchecked(rois[r], gts[g].box);
      if (o > best) {
        best = o;
        matched[r] = static_cast<int>(g);
      }
    }
    if (matched[r] >= 0 && best >= arch.roi_foreground_iou) labels[r] = gts[matched[r]].class_id;
  }
}

RoiSample finish_sample(const ArchConfig& arch, std::vector<Box> rois, std::vector<int> labels,
                        const std::vector<int>& matched, std::span<const Annotation> gts) {
  RoiSample s;
  s.rois = std::move(rois);
  s.labels = std::move(labels);
  s.regression.assign(s.rois.size(), {0, 0, 0, 0});
  for (std::size_t r = 0; r < s.rois.size(); ++r) {
    if (s.labels[r] == 0) continue;
    const auto e = encode_box(s.rois[r], gts[matched[r]].box, arch.roi_box_weights);
    for (int j = 0; j < 4; ++j) s.regression[r][j] = static_cast<Real>(e[j]);
  }
  return s;
}

}  // namespace

RoiSample sample_rois(const ArchConfig& arch, std::span<const Proposal> proposals,
                      std::span<const Annotation> gts, Rng& rng) {
  std::vector<Box> cands;
  cands.reserve(proposals.size() + gts.size());
  for (const auto& p : proposals) cands.push_back(p.box);
  for (const auto& g : gts) cands.push_back(g.box);
  std::vector<int> labels, matched;
  label_rois(arch, cands, gts, labels, matched);
  std::vector<std::size_t> fg, bg;
  for (std::size_t i = 0; i < cands.size(); ++i) (labels[i] > 0 ? fg : bg).push_back(i);
  const auto max_fg = static_cast<std::size_t>(arch.roi_batch * arch.roi_foreground_fraction);
  const auto fg_pick = rng.sample(fg.size(), std::min(max_fg, fg.size()));
  const auto bg_pick = rng.sample(bg.size(), std::min(bg.size(), static_cast<std::size_t>(arch.roi_batch) - fg_pick.size()));
  std::vector<Box> rois;
  std::vector<int> out_labels, out_matched;
  for (const auto i : fg_pick) {
    rois.push_back(cands[fg[i]]);
    out_labels.push_back(labels[fg[i]]);
    out_matched.push_back(matched[fg[i]]);
  }
  for (const auto i : bg_pick) {
    rois.push_back(cands[bg[i]]);
    out_labels.push_back(0);
    out_matched.push_back(matched[bg[i]]);
  }
  return finish_sample(arch, std::move(rois), std::move(out_labels), out_matched, gts);
}

// ---------------------------------------------------------------- losses

double rpn_objectness_loss(DetectorPass& pass, const AnchorTargets& t, double weight) {
  const auto& logits = pass.rpn().objectness;
  auto& grad = pass.rpn_grad().objectness;
  std::size_t count = 0;
  for (const int l : t.labels) count += l >= 0;
  if (count == 0) return 0.0;
  double loss = 0.0;
  for (std::size_t a = 0; a < logits.size(); ++a) {
    if (t.labels[a] < 0) continue;
    const double x = logits[a], y = t.labels[a];
    // log(1 + exp(-|x|)) + max(x, 0) - x y
    loss += std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0) - x * y;
    grad[a] += static_cast<Real>(weight * (sigmoid(x) - y) / count);
  }
  return weight * loss / count;
}

double rpn_regression_loss(DetectorPass& pass, const AnchorTargets& t, double weight) {
  const auto& deltas = pass.rpn().deltas;
  auto& grad = pass.rpn_grad().deltas;
  std::size_t count = 0;
  for (const int l : t.labels) count += l >= 0;
  if (count == 0) return 0.0;
  const double beta = pass.state().arch.rpn_smooth_l1_beta;
  double loss = 0.0;
  for (std::size_t a = 0; a < t.labels.size(); ++a) {
    if (t.labels[a] != 1) continue;
    for (int j = 0; j < 4; ++j) {
      double g = 0.0;
      loss += smooth_l1(deltas[a * 4 + j] - t.regression[a * 4 + j], beta, &g);
      grad[a * 4 + j] += static_cast<Real>(weight * g / count);
    }
  }
  return weight * loss / count;
}

std::pair<double, double> roi_detection_loss(DetectorPass& pass, std::size_t call, const RoiSample& sample,
                                             double weight) {
  const RoiOutputs& out = pass.roi_outputs(call);
  RoiOutputs& grad = pass.roi_grad(call);
  const int rows = out.rows, width = out.logit_width();
  if (rows == 0) return {0.0, 0.0};
  const double beta = pass.state().arch.roi_smooth_l1_beta;
  double ce = 0.0, reg = 0.0;
  std::vector<double> prob(width);
  for (int r = 0; r < rows; ++r) {
    const auto row = out.logit_row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (int c = 0; c < width; ++c) z += (prob[c] = std::exp(row[c] - mx));
    const int label = sample.labels[r];
    ce += -(row[label] - mx - std::log(z));
    for (int c = 0; c < width; ++c) {
      const double g = prob[c] / z - (c == label ? 1.0 : 0.0);
      grad.logits[static_cast<std::size_t>(r) * width + c] += static_cast<Real>(weight * g / rows);
    }
    if (label == 0) continue;
    for (int j = 0; j < 4; ++j) {
      const std::size_t idx = static_cast<std::size_t>(r) * out.delta_width() + 4 * (label - 1) + j;
      double g = 0.0;
      reg += smooth_l1(out.deltas[idx] - sample.regression[r][j], beta, &g);
      grad.deltas[idx] += static_cast<Real>(weight * g / rows);
    }
  }
  return {weight * ce / rows, weight * reg / rows};
}

TrainStep forward_train(const DetectorState& state, const Image& image, std::span<const Annotation> gts,
                        Rng& rng, const std::optional<std::vector<Box>>& fixed_rois) {
  TrainStep step;
  step.pass = std::make_unique<DetectorPass>(state, image);
  auto& pass = *step.pass;
  const auto& arch = state.arch;
  const AnchorTargets targets = assign_anchor_targets(arch, pass.anchors(), gts, rng);
  step.losses.rpn_cls = rpn_objectness_loss(pass, targets);
  step.losses.rpn_reg = rpn_regression_loss(pass, targets);
  step.proposals = pass.propose(arch.train_pre_nms, arch.train_post_nms, arch.rpn_nms);
  if (fixed_rois) {
    std::vector<int> labels, matched;
    label_rois(arch, *fixed_rois, gts, labels, matched);
    step.sampled = finish_sample(arch, *fixed_rois, labels, matched, gts);
  } else {
    step.sampled = sample_rois(arch, step.proposals, gts, rng);
  }
  step.roi_call = pass.run_roi_head(step.sampled.rois);
  std::tie(step.losses.roi_cls, step.losses.roi_reg) = roi_detection_loss(pass, step.roi_call, step.sampled);
  const double total = step.losses.total();
  if (!std::isfinite(total)) {
    std::ostringstream os;
    os << "non-finite detection loss: rpn_cls=" << step.losses.rpn_cls << " rpn_reg=" << step.losses.rpn_reg
       << " roi_cls=" << step.losses.roi_cls << " roi_reg=" << step.losses.roi_reg;
    throw TrainingFault(os.str(), {});
  }
  return step;
}

std::vector<Proposal> propose(const DetectorState& state, const Image& image, int pre_nms_k, int post_nms_k,
                              double nms_threshold) {
  DetectorPass pass(state, image);
  return pass.propose(pre_nms_k, post_nms_k, nms_threshold);
}

std::vector<Detection> infer(const DetectorState& state, const Image& image, const std::string& image_id,
                             const InferenceOptions& opt) {
  const auto& arch = state.arch;
  DetectorPass pass(state, image);
  const auto proposals = pass.propose(arch.test_pre_nms, arch.test_post_nms, arch.rpn_nms);
  std::vector<Box> rois;
  for (const auto& p : proposals) rois.push_back(p.box);
  const auto call = pass.run_roi_head(rois);
  const RoiOutputs& out = pass.roi_outputs(call);
  const int width = out.logit_width();
  std::vector<std::vector<ScoredBox>> per_class(state.class_count + 1);
  std::vector<double> prob(width);
  for (int r = 0; r < out.rows; ++r) {
    const auto row = out.logit_row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (int c = 0; c < width; ++c) z += (prob[c] = std::exp(row[c] - mx));
    for (int c = 1; c < width; ++c) {
      const double score = prob[c] / z;
      if (!(score > opt.score_threshold)) continue;
      const Box b = clip(decode_box(rois[r], out.delta_row(r).subspan(4 * (c - 1), 4), arch.roi_box_weights),
                         pass.image_width(), pass.image_height());
      if (!b.valid()) continue;
      per_class[c].push_back({b, score});
    }
  }
  std::vector<Detection> dets;
  for (int c = 1; c < width; ++c) {
    for (const auto i : nms(per_class[c], opt.nms_threshold)) {
      dets.push_back({image_id, c, std::clamp(per_class[c][i].score, 0.0, 1.0), per_class[c][i].box});
    }
  }
  std::vector<double> scores(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) scores[i] = dets[i].score;
  std::vector<Detection> sorted;
  for (const auto i : descending_order(scores)) {
    if (static_cast<int>(sorted.size()) >= opt.max_detections) break;
    sorted.push_back(dets[i]);
  }
  return sorted;
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kBlobMagic[8] = {'C', 'O', 'D', 'K', 'I', 'T', '0', '1'};

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

}  // namespace

std::filesystem::path save_checkpoint(const DetectorState& state, const std::filesystem::path& stem) {
  const auto blob_path = std::filesystem::path(stem.string() + ".bin");
  const auto manifest_path = std::filesystem::path(stem.string() + ".json");
  {
    std::ofstream os(blob_path, std::ios::binary);
    if (!os) throw Error("cannot write " + blob_path.string());
    os.write(kBlobMagic, sizeof(kBlobMagic));
    std::uint32_t count = 0;
    for_each_param(state.params, [&](const std::string&, Component, const Tensor&) { ++count; });
    put(os, count);
    for_each_param(state.params, [&](const std::string& name, Component, const Tensor& t) {
      put(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put(os, static_cast<std::uint32_t>(t.shape.size()));
      for (const int d : t.shape) put(os, static_cast<std::int32_t>(d));
      os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(Real)));
    });
  }
  nlohmann::json m = {{"arch_config", to_json(state.arch)},
                      {"class_count", state.class_count},
                      {"task_index", state.task_index},
                      {"seed", state.seed},
                      {"creation_time", utc_now()},
                      {"blob", blob_path.filename().string()},
                      {"trainable",
                       {{"backbone", state.trainable.backbone},
                        {"rpn", state.trainable.rpn},
                        {"roi_head", state.trainable.roi_head}}}};
  std::ofstream os(manifest_path);
  if (!os) throw Error("cannot write " + manifest_path.string());
  os << m.dump(1) << '\n';
  return manifest_path;
}

CheckpointManifest read_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IngestionError(manifest_path.string(), "cannot open checkpoint manifest");
  CheckpointManifest m;
  try {
    const auto j = nlohmann::json::parse(in);
    m.arch = arch_from_json(j.at("arch_config"));
    m.class_count = j.at("class_count").get<int>();
    m.task_index = j.at("task_index").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.creation_time = j.value("creation_time", std::string{});
    m.blob = j.at("blob").get<std::string>();
    if (j.contains("trainable")) {
      const auto& t = j.at("trainable");
      m.trainable = {t.at("backbone").get<bool>(), t.at("rpn").get<bool>(), t.at("roi_head").get<bool>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(manifest_path.string(), std::string("malformed manifest: ") + e.what());
  }
  return m;
}

DetectorState load_checkpoint(const std::filesystem::path& manifest_path) {
  const auto m = read_manifest(manifest_path);
  DetectorState state = build_detector(m.arch, m.class_count, m.seed);
  state.task_index = m.task_index;
  state.trainable = m.trainable;
  const auto blob_path = manifest_path.parent_path() / m.blob;
  std::ifstream is(blob_path, std::ios::binary);
  if (!is) throw IngestionError(blob_path.string(), "cannot open checkpoint blob");
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kBlobMagic, sizeof(magic)) != 0) {
    throw IngestionError(blob_path.string(), "not a checkpoint blob");
  }
  const auto count = get<std::uint32_t>(is);
  std::uint32_t seen = 0;
  for_each_param(state.params, [&](const std::string& name, Component, Tensor& t) {
    ++seen;
    const auto len = get<std::uint32_t>(is);
    std::string stored(len, '\0');
    is.read(stored.data(), len);
    const auto ndims = get<std::uint32_t>(is);
    std::vector<int> shape(ndims);
    for (auto& d : shape) d = get<std::int32_t>(is);
    if (!is || stored != name || shape != t.shape) {
      throw IngestionError(blob_path.string(), "parameter layout mismatch at " + name);
    }
    is.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(Real)));
  });
  if (!is || seen != count) throw IngestionError(blob_path.string(), "truncated checkpoint blob");
  return state;
}

}  // namespace codkit
