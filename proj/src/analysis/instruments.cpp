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

#include <algorithm>
#include <cmath>
#include <set>

#include "codkit/analysis.hpp"
#include "codkit/distill.hpp"
#include "codkit/error.hpp"

namespace codkit {

namespace {

int group_of(const ClassGroups& groups, int class_id) {
  for (std::size_t g = 0; g < groups.size(); ++g)
    if (std::find(groups[g].begin(), groups[g].end(), class_id) != groups[g].end()) return static_cast<int>(g);
  return -1;
}

std::map<std::string, std::vector<Annotation>> by_image(const Dataset& ds) {
  std::map<std::string, std::vector<Annotation>> out;
  for (const auto& a : ds.annotations) out[a.image_id].push_back(a);
  return out;
}

}  // namespace

RpnRecallReport rpn_recall(const std::map<std::string, std::vector<Proposal>>& proposals, const Dataset& dataset,
                           const ClassGroups& groups) {
  RpnRecallReport r;
  r.groups.resize(groups.size());
  std::vector<double> objectness_sum(groups.size(), 0.0);
  static const std::vector<Proposal> none;
  for (const auto& a : dataset.annotations) {
    const int g = group_of(groups, a.class_id);
    if (g < 0) continue;
    auto& stats = r.groups[g];
    ++stats.gt_count;
    const auto it = proposals.find(a.image_id);
    const auto& props = it == proposals.end() ? none : it->second;
    double best = 0.0;
    const Proposal* match = nullptr;
    for (const auto& p : props) {
      const double o = iou_unchecked(p.box, a.box);
      if (o > 0.5 && o > best) {
        best = o;
        match = &p;
      }
    }
    if (!match) continue;
    ++stats.found;
    objectness_sum[g] += 1.0 / (1.0 + std::exp(-match->objectness_logit));
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& s = r.groups[g];
    s.found_fraction = s.gt_count ? static_cast<double>(s.found) / static_cast<double>(s.gt_count) : 0.0;
    s.mean_objectness = s.found ? objectness_sum[g] / static_cast<double>(s.found) : 0.0;
  }
  return r;
}

RpnRecallReport rpn_recall(const DetectorState& state, const Dataset& dataset, ImageStore& store,
                           const ClassGroups& groups) {
  std::map<std::string, std::vector<Proposal>> proposals;
  const auto& a = state.arch;
  for (const auto& rec : dataset.images) {
    proposals[rec.image_id] = propose(state, *store.load(rec), a.test_pre_nms, a.test_post_nms, a.rpn_nms);
  }
  return rpn_recall(proposals, dataset, groups);
}

RoiPartition roi_partition(std::span<const RoiObservation> observations, const ClassGroups& groups) {
  RoiPartition p;
  p.groups.resize(groups.size());
  for (auto& g : p.groups) g.wrong_by_group.assign(groups.size(), 0.0);
  for (const auto& o : observations) {
    const int g = group_of(groups, o.true_class);
    if (g < 0 || o.logits.empty()) continue;
    auto& part = p.groups[g];
    ++part.count;
    const int pred = static_cast<int>(std::max_element(o.logits.begin(), o.logits.end()) - o.logits.begin());
    if (pred == 0) {
      part.background += 1.0;
    } else if (pred == o.true_class) {
      part.correct += 1.0;
    } else {
      part.wrong_class += 1.0;
      const int pg = group_of(groups, pred);
      if (pg >= 0) part.wrong_by_group[pg] += 1.0;
    }
  }
  for (auto& part : p.groups) {
    if (part.count == 0) continue;
    const double n = static_cast<double>(part.count);
    part.correct /= n;
    part.wrong_class /= n;
    part.background /= n;
    for (auto& w : part.wrong_by_group) w /= n;
  }
  return p;
}

std::vector<RoiObservation> collect_roi_observations(const DetectorState& state, const Dataset& dataset,
                                                     ImageStore& store) {
  std::vector<RoiObservation> out;
  const auto gts = by_image(dataset);
  const auto& a = state.arch;
  for (const auto& rec : dataset.images) {
    const auto it = gts.find(rec.image_id);
    if (it == gts.end()) continue;
    DetectorPass pass(state, *store.load(rec));
    std::vector<Box> rois;
    std::vector<int> labels;
    for (const auto& p : pass.propose(a.test_pre_nms, a.test_post_nms, a.rpn_nms)) {
      double best = 0.0;
      int label = 0;
      for (const auto& g : it->second) {
        const double o = iou_unchecked(p.box, g.box);
        if (o >= 0.5 && o > best) {
          best = o;
          label = g.class_id;
        }
      }
      if (label == 0) continue;
      rois.push_back(p.box);
      labels.push_back(label);
    }
    if (rois.empty()) continue;
    const auto call = pass.run_roi_head(rois);
    const auto& outputs = pass.roi_outputs(call);
    for (int r = 0; r < outputs.rows; ++r) {
      const auto row = outputs.logit_row(r);
      out.push_back({labels[r], std::vector<double>(row.begin(), row.end())});
    }
  }
  return out;
}

ConfusionMatrix confusion_matrix(std::span<const Detection> dets, const Dataset& dataset, double iou_threshold) {
  const int n = dataset.class_count();
  ConfusionMatrix m;
  m.absolute.assign(n, std::vector<double>(n, 0.0));
  m.normalized = m.absolute;
  m.gt_counts.assign(n, 0);
  for (const auto& a : dataset.annotations) ++m.gt_counts.at(a.class_id - 1);
  const auto gts = by_image(dataset);
  for (const auto& d : dets) {
    if (d.class_id < 1 || d.class_id > n) throw InvalidInput("detection references unknown class");
    const auto it = gts.find(d.image_id);
    if (it == gts.end()) continue;
    double best = 0.0;
    const Annotation* match = nullptr;
    for (const auto& g : it->second) {
      const double o = iou_unchecked(d.box, g.box);
      if (o >= iou_threshold && o > best) {
        best = o;
        match = &g;
      }
    }
    if (match && match->class_id != d.class_id) m.absolute[match->class_id - 1][d.class_id - 1] += 1.0;
  }
  for (int t = 0; t < n; ++t)
    for (int p = 0; p < n; ++p)
      m.normalized[t][p] = m.gt_counts[t] ? m.absolute[t][p] / static_cast<double>(m.gt_counts[t]) : 0.0;
  return m;
}

double block_fraction(const ConfusionMatrix& m, std::span<const int> row_classes, std::span<const int> col_classes) {
  double block = 0.0, total = 0.0;
  for (const int r : row_classes) {
    const auto& row = m.absolute.at(r - 1);
    for (const double v : row) total += v;
    for (const int c : col_classes) block += row.at(c - 1);
  }
  return total > 0.0 ? block / total : 0.0;
}

CooccurrenceMatrix cooccurrence(const Dataset& dataset, bool per_instance) {
  const int n = dataset.class_count();
  CooccurrenceMatrix m;
  m.per_instance = per_instance;
  m.values.assign(n, std::vector<double>(n, 0.0));
  m.denominators.assign(n, 0);
  m.row_defined.assign(n, false);
  for (const auto& [id, anns] : by_image(dataset)) {
    std::vector<int> counts(n, 0);
    for (const auto& a : anns) ++counts.at(a.class_id - 1);
    for (int a = 0; a < n; ++a) {
      if (counts[a] == 0) continue;
      const int weight = per_instance ? counts[a] : 1;
      m.denominators[a] += weight;
      for (int b = 0; b < n; ++b) m.values[a][b] += static_cast<double>(weight) * counts[b];
    }
  }
  for (int a = 0; a < n; ++a) {
    m.row_defined[a] = m.denominators[a] > 0;
    if (!m.row_defined[a]) continue;
    for (int b = 0; b < n; ++b) m.values[a][b] /= static_cast<double>(m.denominators[a]);
  }
  return m;
}

double median(std::vector<double> v) {
  if (v.empty()) throw InvalidInput("median of an empty sequence");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

std::map<int, double> background_scores(const DetectorState& teacher, const TaskView& next, ImageStore& store) {
  std::map<int, std::vector<double>> logits;
  const auto gts = by_image(next.data);
  for (const auto& rec : next.data.images) {
    const auto it = gts.find(rec.image_id);
    if (it == gts.end()) continue;
    DetectorPass pass(teacher, *store.load(rec));
    std::vector<Box> boxes;
    for (const auto& g : it->second) boxes.push_back(g.box);
    const auto call = pass.run_roi_head(boxes);
    const auto& out = pass.roi_outputs(call);
    for (std::size_t i = 0; i < it->second.size(); ++i) {
      logits[it->second[i].class_id].push_back(out.logit_row(static_cast<int>(i))[0]);
    }
  }
  std::map<int, double> medians;
  for (auto& [c, v] : logits) medians[c] = median(std::move(v));
  return medians;
}

std::vector<LossStudyRow> loss_interpolation_study(double l, double delta, int n_extra_logits, int n_points) {
  if (!(l > 0.0) || !std::isfinite(l)) throw InvalidInput("loss study: l must be positive");
  if (!(delta > 0.0)) throw InvalidInput("loss study: delta must be positive");
  if (n_extra_logits < 0 || n_points < 2) throw InvalidInput("loss study: need n_extra_logits >= 0, n_points >= 2");
  constexpr double kEps = 1e-6;
  const std::size_t k = 2 + static_cast<std::size_t>(n_extra_logits);
  std::vector<double> xo(k, 0.0), xn(k, 0.0), x(k);
  xo[0] = l;
  xn[0] = l / 2 - kEps;
  xn[1] = l / 2 + kEps;
  std::vector<LossStudyRow> rows;
  for (int i = 0; i < n_points; ++i) {
    const double alpha = static_cast<double>(i) / (n_points - 1);
    for (std::size_t j = 0; j < k; ++j) x[j] = alpha * xo[j] + (1.0 - alpha) * xn[j];
    LossStudyRow r;
    r.alpha = alpha;
    const double mx = *std::max_element(x.begin(), x.end());
    double z = 0.0;
    for (const double v : x) z += std::exp(v - mx);
    r.ce = -(x[1] - mx - std::log(z));
    for (std::size_t j = 0; j < k; ++j) {
      const double d = x[j] - xo[j];
      r.l1 += std::abs(d);
      r.mse += d * d / static_cast<double>(k);
      r.huber += huber(x[j], xo[j], delta) / static_cast<double>(k);
    }
    rows.push_back(r);
  }
  return rows;
}

}  // namespace codkit
