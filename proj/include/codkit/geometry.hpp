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

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace codkit {

// Axis-aligned box in continuous pixel coordinates. Intervals are half-open,
// area is (x_max - x_min) * (y_max - y_min) with no +1 correction.
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const;

  friend bool operator==(const Box&, const Box&) = default;
};

// Throws InvalidInput if the box violates its invariants.
void validate(const Box& box);

// Clip to [0, width] x [0, height]. The result may be degenerate.
Box clip(const Box& box, double width, double height);

struct Annotation {
  std::string image_id;
  int class_id = 1;  // 0 is background and never annotated
  Box box;
  bool difficult = false;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct Detection {
  std::string image_id;
  int class_id = 1;
  double score = 0.0;
  Box box;

  friend bool operator==(const Detection&, const Detection&) = default;
};

double iou(const Box& a, const Box& b);

// Same as iou() without validation; for inner loops over boxes already known
// to be valid.
double iou_unchecked(const Box& a, const Box& b);

struct ScoredBox {
  Box box;
  double score = 0.0;
};

// Greedy non-maximum suppression. Returns kept indices ordered by descending
// score; equal scores keep the lower index first. A box is dropped when its
// IOU with an already kept box exceeds \p threshold.
std::vector<std::size_t> nms(std::span<const ScoredBox> boxes, double threshold);

// Indices of \p scores sorted by descending score, ties broken by lower index.
std::vector<std::size_t> descending_order(std::span<const double> scores);

enum class MatchKind { kTruePositive, kFalsePositive, kIgnored };

struct MatchResult {
  MatchKind kind = MatchKind::kFalsePositive;
  // Index into the ground-truth sequence for true positives (and for
  // detections ignored because they hit a difficult ground truth).
  std::optional<std::size_t> gt_index;
};

// Greedy VOC-style matching. Detections are visited by descending score
// (ties: lower index first). Each one takes the unmatched same-class,
// same-image ground truth with the highest IOU >= iou_threshold. A detection
// whose best candidate is a difficult ground truth is marked kIgnored and does
// not consume it. Results are indexed like \p dets.
std::vector<MatchResult> match_detections(std::span<const Detection> dets,
                                          std::span<const Annotation> gts,
                                          double iou_threshold);

}  // namespace codkit
