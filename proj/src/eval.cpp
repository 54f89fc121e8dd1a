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

#include "codkit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "codkit/error.hpp"

namespace codkit {

std::string to_string(IouProtocol p) { return p == IouProtocol::kVoc50 ? "voc50" : "coco"; }
std::string to_string(ApInterpolation i) { return i == ApInterpolation::kAllPoints ? "all-points" : "11-point"; }

IouProtocol protocol_from_string(const std::string& name) {
  if (name == "voc50") return IouProtocol::kVoc50;
  if (name == "coco") return IouProtocol::kCoco;
  throw ConfigError("unknown protocol '" + name + "' (expected voc50 or coco)");
}

ApInterpolation interpolation_from_string(const std::string& name) {
  if (name == "all-points") return ApInterpolation::kAllPoints;
  if (name == "11-point") return ApInterpolation::kElevenPoint;
  throw ConfigError("unknown interpolation '" + name + "'");
}

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

std::optional<double> average_precision(std::span<const Detection> dets, std::span<const Annotation> gts,
                                        int class_id, double iou_threshold, ApInterpolation interp,
                                        int max_per_image) {
  std::vector<Annotation> cls_gts;
  std::size_t npos = 0;
  for (const auto& g : gts) {
    if (g.class_id != class_id) continue;
    cls_gts.push_back(g);
    npos += !g.difficult;
  }
  if (npos == 0) return std::nullopt;

  std::vector<Detection> cls_dets;
  for (const auto& d : dets)
    if (d.class_id == class_id) cls_dets.push_back(d);
  if (max_per_image > 0) {
    std::vector<double> scores(cls_dets.size());
    for (std::size_t i = 0; i < cls_dets.size(); ++i) scores[i] = cls_dets[i].score;
    std::map<std::string, int> seen;
    std::vector<Detection> capped;
    for (const auto i : descending_order(scores)) {
      if (seen[cls_dets[i].image_id]++ < max_per_image) capped.push_back(cls_dets[i]);
    }
    cls_dets = std::move(capped);
  }

  std::vector<double> scores(cls_dets.size());
  for (std::size_t i = 0; i < cls_dets.size(); ++i) scores[i] = cls_dets[i].score;
  const auto matches = match_detections(cls_dets, cls_gts, iou_threshold);
  std::vector<double> precision, recall;
  std::size_t tp = 0, fp = 0;
  for (const auto i : descending_order(scores)) {
    if (matches[i].kind == MatchKind::kIgnored) continue;
    (matches[i].kind == MatchKind::kTruePositive ? tp : fp) += 1;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(npos));
  }

  if (interp == ApInterpolation::kElevenPoint) {
    double ap = 0.0;
    for (int k = 0; k <= 10; ++k) {
      const double r = k / 10.0;
      double p = 0.0;
      for (std::size_t i = 0; i < recall.size(); ++i)
        if (recall[i] >= r) p = std::max(p, precision[i]);
      ap += p / 11.0;
    }
    return ap;
  }
  // Precision envelope, right to left.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev) * precision[i];
    prev = recall[i];
  }
  return ap;
}

std::optional<double> EvalReport::mean_over(std::span<const int> class_ids) const {
  double sum = 0.0;
  int n = 0;
  for (const int c : class_ids) {
    const auto it = per_class_ap.find(c);
    if (it == per_class_ap.end()) continue;
    sum += it->second;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

EvalReport evaluate(std::span<const Detection> dets, const Dataset& dataset, IouProtocol protocol,
                    const std::vector<std::vector<int>>& task_groups, ApInterpolation interp,
                    const std::string& eval_set_id) {
  const int classes = dataset.class_count();
  std::set<std::string> ids;
  for (const auto& im : dataset.images) ids.insert(im.image_id);
  for (const auto& d : dets) {
    if (d.class_id < 1 || d.class_id > classes) {
      throw InvalidInput("detection references unknown class " + std::to_string(d.class_id));
    }
    if (!ids.count(d.image_id)) throw InvalidInput("detection references unknown image '" + d.image_id + "'");
  }

  EvalReport r;
  r.protocol = protocol;
  r.interpolation = interp;
  r.eval_set_id = eval_set_id;
  r.class_names = dataset.class_names;
  for (int c = 1; c <= classes; ++c) {
    if (protocol == IouProtocol::kVoc50) {
      if (const auto ap = average_precision(dets, dataset.annotations, c, 0.5, interp)) r.per_class_ap[c] = *ap;
      continue;
    }
    std::vector<double> aps;
    for (const double t : coco_iou_thresholds()) {
      const auto ap = average_precision(dets, dataset.annotations, c, t, interp, 100);
      if (!ap) break;
      aps.push_back(*ap);
    }
    if (aps.empty()) continue;
    r.per_class_ap[c] = std::accumulate(aps.begin(), aps.end(), 0.0) / static_cast<double>(aps.size());
    r.per_class_ap50[c] = aps[0];
    r.per_class_ap75[c] = aps[5];
  }

  std::vector<std::vector<int>> groups = task_groups;
  if (groups.empty()) {
    groups.emplace_back(classes);
    std::iota(groups[0].begin(), groups[0].end(), 1);
  }
  double task_sum = 0.0;
  int task_n = 0;
  for (std::size_t t = 0; t < groups.size(); ++t) {
    if (const auto m = r.mean_over(groups[t])) {
      r.per_task_map[static_cast<int>(t)] = *m;
      task_sum += *m;
      ++task_n;
    }
  }
  double sum = 0.0;
  for (const auto& [c, ap] : r.per_class_ap) sum += ap;
  r.overall_map = r.per_class_ap.empty() ? 0.0 : sum / static_cast<double>(r.per_class_ap.size());
  r.task_average = task_n ? task_sum / task_n : 0.0;
  return r;
}

namespace {

nlohmann::json ap_map(const std::map<int, double>& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : m) j[std::to_string(k)] = v;
  return j;
}

std::map<int, double> ap_map(const nlohmann::json& j) {
  std::map<int, double> m;
  for (const auto& [k, v] : j.items()) m[std::stoi(k)] = v.get<double>();
  return m;
}

}  // namespace

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j = {{"protocol", to_string(r.protocol)},
                      {"interpolation", to_string(r.interpolation)},
                      {"eval_set_id", r.eval_set_id},
                      {"class_names", r.class_names},
                      {"per_class_ap", ap_map(r.per_class_ap)},
                      {"per_task_map", ap_map(r.per_task_map)},
                      {"overall_map", r.overall_map},
                      {"task_average", r.task_average}};
  if (r.protocol == IouProtocol::kCoco) {
    j["per_class_ap50"] = ap_map(r.per_class_ap50);
    j["per_class_ap75"] = ap_map(r.per_class_ap75);
  }
  return j;
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.protocol = protocol_from_string(j.at("protocol").get<std::string>());
    r.interpolation = interpolation_from_string(j.at("interpolation").get<std::string>());
    r.eval_set_id = j.value("eval_set_id", std::string{});
    r.class_names = j.at("class_names").get<std::vector<std::string>>();
    r.per_class_ap = ap_map(j.at("per_class_ap"));
    r.per_task_map = ap_map(j.at("per_task_map"));
    r.overall_map = j.at("overall_map").get<double>();
    r.task_average = j.at("task_average").get<double>();
    if (j.contains("per_class_ap50")) r.per_class_ap50 = ap_map(j["per_class_ap50"]);
    if (j.contains("per_class_ap75")) r.per_class_ap75 = ap_map(j["per_class_ap75"]);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed eval report: ") + e.what());
  }
  return r;
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << j.dump(1) << '\n';
}

void write_per_class_csv(const std::vector<std::pair<std::string, EvalReport>>& rows,
                         const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  std::vector<std::string> names = rows.empty() ? std::vector<std::string>{} : rows.front().second.class_names;
  os << "method";
  for (const auto& n : names) os << ',' << n;
  os << ",mAP\n";
  os << std::fixed << std::setprecision(1);
  for (const auto& [label, r] : rows) {
    os << label;
    for (std::size_t c = 1; c <= names.size(); ++c) {
      os << ',';
      const auto it = r.per_class_ap.find(static_cast<int>(c));
      if (it != r.per_class_ap.end()) os << 100.0 * it->second;
    }
    os << ',' << 100.0 * r.overall_map << '\n';
  }
}

NormalizedReport normalized_map(const EvalReport& report, const EvalReport& joint) {
  NormalizedReport n;
  for (const auto& [c, ap] : report.per_class_ap) {
    const auto it = joint.per_class_ap.find(c);
    if (it == joint.per_class_ap.end()) throw InvalidInput("joint report lacks class " + std::to_string(c));
    n.per_class[c] = it->second > 0.0 ? std::optional<double>(ap / it->second) : std::nullopt;
  }
  for (const auto& [t, m] : report.per_task_map) {
    const auto it = joint.per_task_map.find(t);
    if (it == joint.per_task_map.end()) continue;
    n.per_task[t] = it->second > 0.0 ? std::optional<double>(m / it->second) : std::nullopt;
  }
  return n;
}

nlohmann::json to_json(const NormalizedReport& r) {
  const auto conv = [](const std::map<int, std::optional<double>>& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : m) j[std::to_string(k)] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    return j;
  };
  return {{"per_class", conv(r.per_class)}, {"per_task", conv(r.per_task)}};
}

std::vector<double> forgetting(const std::vector<std::vector<double>>& matrix) {
  std::vector<double> f;
  if (matrix.size() < 2) return f;
  const auto& last = matrix.back();
  for (std::size_t t = 0; t + 1 < matrix.size(); ++t) {
    if (matrix[t].size() <= t || last.size() <= t) throw InvalidInput("forgetting: matrix is not lower-triangular");
    f.push_back(matrix[t][t] - last[t]);
  }
  return f;
}

std::vector<Detection> read_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError(path.string(), "cannot open detection file");
  std::vector<Detection> dets;
  try {
    for (const auto& d : nlohmann::json::parse(in)) {
      const auto b = d.at("bbox").get<std::array<double, 4>>();
      dets.push_back({d.at("image_id").get<std::string>(), d.at("class_id").get<int>(), d.at("score").get<double>(),
                      {b[0], b[1], b[2], b[3]}});
    }
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(path.string(), std::string("malformed detections: ") + e.what());
  }
  return dets;
}

void write_detections(std::span<const Detection> dets, const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& d : dets) {
    j.push_back({{"image_id", d.image_id},
                 {"class_id", d.class_id},
                 {"score", d.score},
                 {"bbox", {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max}}});
  }
  write_json(j, path);
}

}  // namespace codkit
