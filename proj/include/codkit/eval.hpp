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
#include "codkit/geometry.hpp"

namespace codkit {

enum class IouProtocol { kVoc50, kCoco };
enum class ApInterpolation { kAllPoints, kElevenPoint };

std::string to_string(IouProtocol p);
std::string to_string(ApInterpolation i);
IouProtocol protocol_from_string(const std::string& name);
ApInterpolation interpolation_from_string(const std::string& name);

// IOU thresholds 0.50, 0.55, ..., 0.95.
std::vector<double> coco_iou_thresholds();

// AP of one class over a whole evaluation set. Returns nullopt when the class
// has no non-difficult ground truth. \p max_per_image caps detections per
// image (0 = unlimited).
std::optional<double> average_precision(std::span<const Detection> dets, std::span<const Annotation> gts,
                                        int class_id, double iou_threshold,
                                        ApInterpolation interp = ApInterpolation::kAllPoints,
                                        int max_per_image = 0);

struct EvalReport {
  IouProtocol protocol = IouProtocol::kVoc50;
  ApInterpolation interpolation = ApInterpolation::kAllPoints;
  std::string eval_set_id;
  std::vector<std::string> class_names;     // index = class id - 1
  std::map<int, double> per_class_ap;       // classes with ground truth only
  std::map<int, double> per_class_ap50;     // coco only
  std::map<int, double> per_class_ap75;     // coco only
  std::map<int, double> per_task_map;       // task index -> mean AP of its classes
  double overall_map = 0.0;
  double task_average = 0.0;

  // Mean AP over \p class_ids that have an entry; nullopt if none do.
  std::optional<double> mean_over(std::span<const int> class_ids) const;
};

// \p task_groups lists the class ids of each task; without it every class
// forms a single task.
EvalReport evaluate(std::span<const Detection> dets, const Dataset& dataset, IouProtocol protocol,
                    const std::vector<std::vector<int>>& task_groups = {},
                    ApInterpolation interp = ApInterpolation::kAllPoints, const std::string& eval_set_id = "");

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);
void write_json(const nlohmann::json& j, const std::filesystem::path& path);

// One row per report, one column per class (AP in percent), then mAP.
void write_per_class_csv(const std::vector<std::pair<std::string, EvalReport>>& rows,
                         const std::filesystem::path& path);

struct NormalizedReport {
  std::map<int, std::optional<double>> per_class;  // nullopt when the joint AP is 0
  std::map<int, std::optional<double>> per_task;
};

NormalizedReport normalized_map(const EvalReport& report, const EvalReport& joint);
nlohmann::json to_json(const NormalizedReport& r);

// matrix[i][j] = mAP of task j after training task i (j <= i). Returns one
// value per task except the last.
std::vector<double> forgetting(const std::vector<std::vector<double>>& matrix);

// Detection files: a JSON array of {image_id, class_id, score, bbox}.
std::vector<Detection> read_detections(const std::filesystem::path& path);
void write_detections(std::span<const Detection> dets, const std::filesystem::path& path);

}  // namespace codkit
