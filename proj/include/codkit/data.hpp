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
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "codkit/geometry.hpp"
#include "codkit/tensor.hpp"

namespace codkit {

struct ImageRecord {
  std::string image_id;
  int width = 0;
  int height = 0;
  // File path, or a "synth:" descriptor that fully determines the pixels.
  std::string source;
  std::string domain;  // empty when the dataset has no domain tags

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct Dataset {
  std::vector<ImageRecord> images;
  std::vector<Annotation> annotations;
  std::vector<std::string> class_names;  // class_id - 1 indexes this

  int class_count() const { return static_cast<int>(class_names.size()); }

  // Throws InvalidInput when an invariant is broken (dangling image ids,
  // duplicate image ids, class ids out of range, invalid boxes).
  void validate() const;

  // Annotation indices grouped by image id.
  std::map<std::string, std::vector<std::size_t>> annotations_by_image() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

enum class IncrementMode { kClass, kDomain };

struct TaskSpec {
  int task_index = 1;  // 1-based
  IncrementMode mode = IncrementMode::kClass;
  std::vector<int> class_ids;  // for domain mode: the full class universe
  std::string domain_tag;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

// A task's slice of a dataset. \c data keeps the full class_names universe;
// its images and annotations are restricted to the task.
struct TaskView {
  TaskSpec task;
  Dataset data;

  friend bool operator==(const TaskView&, const TaskView&) = default;
};

inline const std::vector<std::string>& voc_class_names() {
  static const std::vector<std::string> names = {
      "aeroplane", "bicycle", "bird",  "boat",      "bottle", "bus",         "car",
      "cat",       "chair",   "cow",   "diningtable", "dog",  "horse",       "motorbike",
      "person",    "pottedplant", "sheep", "sofa",  "train",  "tvmonitor"};
  return names;
}

// PASCAL VOC XML annotations. Boxes are converted from 1-based inclusive
// pixels to the internal half-open convention by subtracting 1 from the
// minimum corner. \p image_dir, when given, prefixes the XML <filename>.
Dataset load_voc(const std::filesystem::path& annotation_dir,
                 const std::filesystem::path& split_file,
                 const std::filesystem::path& image_dir = {});

// COCO JSON. Category ids are remapped to 1..C in ascending COCO id order;
// crowd annotations become difficult.
Dataset load_coco(const std::filesystem::path& annotation_json,
                  const std::filesystem::path& image_dir = {});
void save_coco(const Dataset& ds, const std::filesystem::path& annotation_json);

// The toolkit's own dataset document.
Dataset read_dataset(const std::filesystem::path& path);
void write_dataset(const Dataset& ds, const std::filesystem::path& path);
TaskView read_task_view(const std::filesystem::path& path);
void write_task_view(const TaskView& view, const std::filesystem::path& path);

struct ShapeArchetype {
  std::string name;
  std::string shape;  // circle square triangle diamond plus ring cross frame
  std::array<double, 3> color{1.0, 1.0, 1.0};
};

// Built-in archetype catalogue, distinct shape and colour per entry.
const std::vector<ShapeArchetype>& default_archetypes();

struct CooccurrenceBias {
  int from_class = 1;
  int to_class = 2;
  double probability = 0.0;  // per image containing from_class
  int count = 1;             // to_class objects added when triggered
};

// Each image draws one anchor class (by class_weights, uniform when empty)
// and between min_objects and max_objects instances of it. Every bias entry
// whose from_class is the anchor then fires independently, adding \c count
// objects of to_class. Boxes overlapping an existing object with IOU above
// max_mutual_iou are redrawn.
struct ShapesConfig {
  std::uint64_t seed = 0;
  int n_images = 100;
  int image_size = 64;
  std::vector<ShapeArchetype> classes;
  int min_objects = 1;
  int max_objects = 2;
  std::vector<CooccurrenceBias> bias;
  std::vector<double> class_weights;
  int min_box = 10;
  int max_box = 26;
  double max_mutual_iou = 0.7;
  double noise = 0.04;
  std::string id_prefix = "s";
};

Dataset generate_shapes(const ShapesConfig& config);

// Task t owns the next sizes[t] classes in dataset class order; annotations
// of every other class are dropped, images without a remaining annotation
// are left out of that task.
std::vector<TaskView> split_class_incremental(const Dataset& ds, const std::vector<int>& sizes);

// One task per domain tag, in the given order, keeping all annotations.
std::vector<TaskView> split_domain_incremental(const Dataset& ds,
                                               const std::vector<std::string>& order);

// Resolves ImageRecord sources to pixels. Synthetic descriptors are rendered;
// files are decoded (PPM natively, other formats through OpenCV). Results are
// cached; the store is safe to share between threads.
class ImageStore {
 public:
  explicit ImageStore(std::size_t max_cached = 4096) : max_cached_(max_cached) {}
  std::shared_ptr<const Image> load(const ImageRecord& record);

 private:
  std::size_t max_cached_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const Image>> cache_;
};

Image render_synthetic(const std::string& descriptor, int width, int height);
Image decode_image_file(const std::filesystem::path& path);
void write_ppm(const Image& image, const std::filesystem::path& path);

// Mirror an image and its annotations about the vertical axis.
Image flip_horizontal(const Image& image);
std::vector<Annotation> flip_horizontal(std::vector<Annotation> anns, double width);

}  // namespace codkit
