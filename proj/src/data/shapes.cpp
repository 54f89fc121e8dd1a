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
#include <cstdio>
#include <numeric>
#include <sstream>

#include "codkit/data.hpp"
#include "codkit/error.hpp"
#include "codkit/random.hpp"

namespace codkit {

const std::vector<ShapeArchetype>& default_archetypes() {
  static const std::vector<ShapeArchetype> catalogue = {
      {"circle", "circle", {0.90, 0.15, 0.15}},   {"square", "square", {0.15, 0.85, 0.20}},
      {"triangle", "triangle", {0.20, 0.35, 0.95}}, {"diamond", "diamond", {0.95, 0.90, 0.15}},
      {"plus", "plus", {0.90, 0.20, 0.85}},       {"ring", "ring", {0.15, 0.90, 0.90}},
      {"cross", "cross", {1.00, 0.55, 0.10}},     {"frame", "frame", {0.95, 0.95, 0.95}},
  };
  return catalogue;
}

namespace {

struct PlacedObject {
  int class_id;
  int x1, y1, x2, y2;
};

Box to_box(const PlacedObject& o) { return {double(o.x1), double(o.y1), double(o.x2), double(o.y2)}; }

std::string format_color(const std::array<double, 3>& c) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f,%.4f,%.4f", c[0], c[1], c[2]);
  return buf;
}

}  // namespace

Dataset generate_shapes(const ShapesConfig& cfg) {
  const int n_classes = static_cast<int>(cfg.classes.size());
  if (n_classes < 2) throw ConfigError("shape generator needs at least 2 classes");
  if (cfg.image_size < 64) throw ConfigError("shape generator image_size must be >= 64");
  if (cfg.min_objects < 1 || cfg.max_objects < cfg.min_objects) {
    throw ConfigError("objects-per-image range must satisfy 1 <= min <= max");
  }
  if (cfg.n_images < 0) throw ConfigError("n_images must be non-negative");
  if (cfg.min_box < 2 || cfg.max_box < cfg.min_box || cfg.max_box > cfg.image_size) {
    throw ConfigError("box size range must satisfy 2 <= min_box <= max_box <= image_size");
  }
  for (const auto& b : cfg.bias) {
    if (b.from_class < 1 || b.from_class > n_classes || b.to_class < 1 || b.to_class > n_classes) {
      throw ConfigError("co-occurrence bias refers to an unknown class");
    }
    if (b.probability < 0.0 || b.probability > 1.0 || b.count < 1) {
      throw ConfigError("co-occurrence bias needs probability in [0,1] and count >= 1");
    }
  }
  std::vector<double> weights = cfg.class_weights;
  if (weights.empty()) weights.assign(n_classes, 1.0);
  if (static_cast<int>(weights.size()) != n_classes) {
    throw ConfigError("class_weights must have one entry per class");
  }
  const double weight_sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(weight_sum > 0.0) || *std::min_element(weights.begin(), weights.end()) < 0.0) {
    throw ConfigError("class_weights must be non-negative with a positive sum");
  }

  Dataset ds;
  for (const auto& a : cfg.classes) ds.class_names.push_back(a.name);
  const int size = cfg.image_size;

  for (int i = 0; i < cfg.n_images; ++i) {
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    double pick = rng.uniform() * weight_sum;
    int anchor = n_classes;
    for (int c = 0; c < n_classes; ++c) {
      if (pick < weights[c]) {
        anchor = c + 1;
        break;
      }
      pick -= weights[c];
    }
    std::vector<int> wanted(rng.between(cfg.min_objects, cfg.max_objects), anchor);
    for (const auto& b : cfg.bias) {
      if (b.from_class != anchor) continue;
      if (rng.bernoulli(b.probability)) wanted.insert(wanted.end(), b.count, b.to_class);
    }

    std::vector<PlacedObject> placed;
    for (const int cls : wanted) {
      bool ok = false;
      for (int attempt = 0; attempt < 500 && !ok; ++attempt) {
        const int w = rng.between(cfg.min_box, cfg.max_box);
        const int h = rng.between(cfg.min_box, cfg.max_box);
        const int x = rng.between(0, size - w);
        const int y = rng.between(0, size - h);
        const PlacedObject cand{cls, x, y, x + w, y + h};
        ok = std::all_of(placed.begin(), placed.end(), [&](const PlacedObject& o) {
          return iou_unchecked(to_box(o), to_box(cand)) <= cfg.max_mutual_iou;
        });
        if (ok) placed.push_back(cand);
      }
      if (!ok) throw ConfigError("cannot place object without exceeding max_mutual_iou");
    }

    char id[32];
    std::snprintf(id, sizeof(id), "%s%06d", cfg.id_prefix.c_str(), i);
    std::array<double, 3> bg;
    for (auto& ch : bg) ch = rng.uniform(0.05, 0.35);
    std::ostringstream src;
    src << "synth:v1;seed=" << rng.next() << ";bg=" << format_color(bg) << ";noise=" << cfg.noise;
    // Larger objects are painted first so small ones stay visible.
    std::vector<std::size_t> paint(placed.size());
    std::iota(paint.begin(), paint.end(), std::size_t{0});
    std::stable_sort(paint.begin(), paint.end(), [&](std::size_t a, std::size_t b) {
      return to_box(placed[a]).area() > to_box(placed[b]).area();
    });
    for (const std::size_t k : paint) {
      const auto& o = placed[k];
      const auto& arch = cfg.classes[o.class_id - 1];
      src << ";o=" << arch.shape << ',' << format_color(arch.color) << ',' << o.x1 << ',' << o.y1
          << ',' << o.x2 << ',' << o.y2;
    }
    ds.images.push_back({id, size, size, src.str(), ""});
    for (const auto& o : placed) ds.annotations.push_back({id, o.class_id, to_box(o), false});
  }
  return ds;
}

}  // namespace codkit
