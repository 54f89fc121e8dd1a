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

#include "codkit/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "codkit/error.hpp"

namespace codkit {

bool Box::valid() const {
  return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
         std::isfinite(y_max) && x_max > x_min && y_max > y_min;
}

void validate(const Box& box) {
  if (!box.valid()) {
    std::ostringstream os;
    os << "invalid box (" << box.x_min << ", " << box.y_min << ", " << box.x_max
       << ", " << box.y_max << ")";
    throw InvalidInput(os.str());
  }
}

Box clip(const Box& box, double width, double height) {
  return {std::clamp(box.x_min, 0.0, width), std::clamp(box.y_min, 0.0, height),
          std::clamp(box.x_max, 0.0, width), std::clamp(box.y_max, 0.0, height)};
}

double iou_unchecked(const Box& a, const Box& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  // Union is computed symmetrically so iou(a, b) == iou(b, a) bit-for-bit.
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou(const Box& a, const Box& b) {
  validate(a);
  validate(b);
  return iou_unchecked(a, b);
}

std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
    return scores[l] > scores[r];
  });
  return order;
}

std::vector<std::size_t> nms(std::span<const ScoredBox> boxes, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw InvalidInput("nms threshold must be in (0, 1]");
  }
  std::vector<double> scores(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    validate(boxes[i].box);
    scores[i] = boxes[i].score;
  }
  const auto order = descending_order(scores);
  std::vector<std::size_t> kept;
  std::vector<bool> suppressed(boxes.size(), false);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!suppressed[j] && iou_unchecked(boxes[i].box, boxes[j].box) > threshold) {
        suppressed[j] = true;
      }
    }
  }
  return kept;
}

std::vector<MatchResult> match_detections(std::span<const Detection> dets,
                                          std::span<const Annotation> gts,
                                          double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw InvalidInput("match iou_threshold must be in (0, 1]");
  }
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> gts_by_key;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    validate(gts[g].box);
    gts_by_key[{gts[g].image_id, gts[g].class_id}].push_back(g);
  }
  std::vector<double> scores(dets.size());
  for (std::size_t d = 0; d < dets.size(); ++d) {
    validate(dets[d].box);
    scores[d] = dets[d].score;
  }

  std::vector<MatchResult> results(dets.size());
  std::vector<bool> taken(gts.size(), false);
  for (const std::size_t d : descending_order(scores)) {
    const auto it = gts_by_key.find({dets[d].image_id, dets[d].class_id});
    if (it == gts_by_key.end()) continue;
    double best = -1.0;
    std::optional<std::size_t> best_gt;
    for (const std::size_t g : it->second) {
      if (taken[g]) continue;
      const double overlap = iou_unchecked(dets[d].box, gts[g].box);
      if (overlap >= iou_threshold && overlap > best) {
        best = overlap;
        best_gt = g;
      }
    }
    if (!best_gt) continue;
    if (gts[*best_gt].difficult) {
      results[d] = {MatchKind::kIgnored, best_gt};
    } else {
      taken[*best_gt] = true;
      results[d] = {MatchKind::kTruePositive, best_gt};
    }
  }
  return results;
}

}  // namespace codkit
