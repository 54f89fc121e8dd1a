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

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "codkit/data.hpp"
#include "codkit/detector.hpp"

namespace codkit {

using ClassGroups = std::vector<std::vector<int>>;

// ---------------------------------------------------------------- RPN recall

struct RpnGroupStats {
  std::size_t gt_count = 0;
  std::size_t found = 0;
  double found_fraction = 0.0;   // gts with a proposal at IOU > 0.5
  double mean_objectness = 0.0;  // mean sigmoid objectness of the best match of found gts
};

struct RpnRecallReport {
  std::vector<RpnGroupStats> groups;
};

// \p proposals maps image id to that image's proposals.
RpnRecallReport rpn_recall(const std::map<std::string, std::vector<Proposal>>& proposals, const Dataset& dataset,
                           const ClassGroups& groups);
// Proposals from the detector at its inference settings.
RpnRecallReport rpn_recall(const DetectorState& state, const Dataset& dataset, ImageStore& store,
                           const ClassGroups& groups);

// ---------------------------------------------------------------- ROI partition

struct RoiObservation {
  int true_class = 0;
  std::vector<double> logits;  // background first
};

struct RoiGroupPartition {
  std::size_t count = 0;
  double correct = 0.0;
  double wrong_class = 0.0;
  double background = 0.0;
  std::vector<double> wrong_by_group;  // fraction of all proposals, by group of the predicted class
};

struct RoiPartition {
  std::vector<RoiGroupPartition> groups;
};

RoiPartition roi_partition(std::span<const RoiObservation> observations, const ClassGroups& groups);
// Inference proposals matched to a ground truth at IOU >= 0.5, with the ROI
// head logits of each.
std::vector<RoiObservation> collect_roi_observations(const DetectorState& state, const Dataset& dataset,
                                                     ImageStore& store);

// ---------------------------------------------------------------- matrices

struct ConfusionMatrix {
  std::vector<std::vector<double>> absolute;    // [true - 1][pred - 1], diagonal zero
  std::vector<std::vector<double>> normalized;  // absolute / gt count of the row, NaN-free
  std::vector<std::size_t> gt_counts;
};

ConfusionMatrix confusion_matrix(std::span<const Detection> dets, const Dataset& dataset,
                                 double iou_threshold = 0.5);
// Share of the wrong classifications of \p row_classes predicted as one of
// \p col_classes.
double block_fraction(const ConfusionMatrix& m, std::span<const int> row_classes, std::span<const int> col_classes);

struct CooccurrenceMatrix {
  std::vector<std::vector<double>> values;  // [a - 1][b - 1]
  std::vector<std::size_t> denominators;    // images (or instances) of the row class
  std::vector<bool> row_defined;
  bool per_instance = false;
};

// entry(a, b) = objects of b in images with a, averaged over images with a
// (or over a instances when \p per_instance).
CooccurrenceMatrix cooccurrence(const Dataset& dataset, bool per_instance = false);

// ---------------------------------------------------------------- background

double median(std::vector<double> values);

// Per-class median background logit of the ground-truth boxes of \p next.
std::map<int, double> background_scores(const DetectorState& teacher, const TaskView& next, ImageStore& store);

// ---------------------------------------------------------------- losses

struct LossStudyRow {
  double alpha = 0.0;
  double l1 = 0.0;
  double ce = 0.0;
  double mse = 0.0;
  double huber = 0.0;
};

// Interpolates x = alpha x_o + (1 - alpha) x_n with x_o = (l, 0, ...) and
// x_n = (l/2 - 1e-6, l/2 + 1e-6, 0, ...); alpha runs over n_points values
// from 0 to 1. Distances and distillation losses are measured against x_o,
// CE against the second logit.
std::vector<LossStudyRow> loss_interpolation_study(double l, double delta, int n_extra_logits, int n_points);
void write_loss_study_csv(std::span<const LossStudyRow> rows, double l, double delta,
                          const std::filesystem::path& path);

// ---------------------------------------------------------------- output

nlohmann::json to_json(const RpnRecallReport& r);
nlohmann::json to_json(const RoiPartition& r);
nlohmann::json to_json(const ConfusionMatrix& m);
nlohmann::json to_json(const CooccurrenceMatrix& m);

void write_matrix_csv(const std::vector<std::vector<double>>& m, const std::vector<std::string>& labels,
                      const std::filesystem::path& path);

struct PlotSeries {
  std::string name;
  std::vector<double> y;
};

void write_heatmap_svg(const std::vector<std::vector<double>>& m, const std::vector<std::string>& labels,
                       const std::string& title, const std::filesystem::path& path);
void write_line_plot_svg(const std::vector<double>& x, const std::vector<PlotSeries>& series,
                         const std::string& x_label, const std::string& title, const std::filesystem::path& path);

}  // namespace codkit
