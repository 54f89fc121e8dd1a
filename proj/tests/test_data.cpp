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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "codkit/data.hpp"
#include "codkit/error.hpp"
#include "codkit/random.hpp"

using namespace codkit;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("codkit_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

ShapesConfig two_class_config(std::uint64_t seed, int n, double p) {
  ShapesConfig cfg;
  cfg.seed = seed;
  cfg.n_images = n;
  cfg.classes = {default_archetypes()[0], default_archetypes()[1]};
  cfg.bias = {{1, 2, p, 1}};
  return cfg;
}

std::set<int> classes_in(const Dataset& ds, const std::string& image_id) {
  std::set<int> s;
  for (const auto& a : ds.annotations)
    if (a.image_id == image_id) s.insert(a.class_id);
  return s;
}

// Co-occurrence rate P(b present | a present) measured over images.
double cooccurrence_rate(const Dataset& ds, int a, int b) {
  int with_a = 0, with_both = 0;
  for (const auto& img : ds.images) {
    const auto s = classes_in(ds, img.image_id);
    if (!s.count(a)) continue;
    ++with_a;
    with_both += s.count(b) ? 1 : 0;
  }
  return with_a ? static_cast<double>(with_both) / with_a : 0.0;
}

}  // namespace

TEST_CASE("shapes generator is deterministic") {
  const auto a = generate_shapes(two_class_config(4, 50, 0.5));
  const auto b = generate_shapes(two_class_config(4, 50, 0.5));
  CHECK(a == b);
  const auto c = generate_shapes(two_class_config(5, 50, 0.5));
  CHECK_FALSE(a.annotations == c.annotations);
  a.validate();
}

TEST_CASE("shapes are rendered deterministically and match their size") {
  const auto ds = generate_shapes(two_class_config(4, 3, 0.5));
  for (const auto& img : ds.images) {
    const Image x = render_synthetic(img.source, img.width, img.height);
    CHECK(x == render_synthetic(img.source, img.width, img.height));
    CHECK(x.shape == std::vector<int>{3, img.height, img.width});
    for (const Real v : x.data) REQUIRE((v >= 0 && v <= 1));
  }
}

TEST_CASE("forced co-occurrence") {
  const auto ds = generate_shapes(two_class_config(9, 400, 1.0));
  int with_a = 0;
  for (const auto& img : ds.images) {
    const auto s = classes_in(ds, img.image_id);
    if (!s.count(1)) continue;
    ++with_a;
    CHECK(s.count(2) == 1);
  }
  CHECK(with_a > 100);
}

TEST_CASE("co-occurrence bias 0.5 holds empirically over 1e4 images") {
  auto cfg = two_class_config(17, 10000, 0.5);
  cfg.min_objects = cfg.max_objects = 1;
  const auto ds = generate_shapes(cfg);
  CHECK(std::abs(cooccurrence_rate(ds, 1, 2) - 0.5) <= 0.03);
}

TEST_CASE("generated boxes respect the mutual IOU bound and image extent") {
  auto cfg = two_class_config(3, 200, 0.8);
  cfg.max_objects = 3;
  const auto ds = generate_shapes(cfg);
  for (const auto& [id, idx] : ds.annotations_by_image()) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const Box& b = ds.annotations[idx[i]].box;
      REQUIRE(b.x_min >= 0);
      REQUIRE(b.x_max <= cfg.image_size);
      for (std::size_t j = i + 1; j < idx.size(); ++j) REQUIRE(iou(b, ds.annotations[idx[j]].box) <= 0.7);
    }
  }
}

TEST_CASE("degenerate generator configs are rejected") {
  auto cfg = two_class_config(1, 5, 0.5);
  cfg.min_objects = 0;
  CHECK_THROWS_AS(generate_shapes(cfg), ConfigError);
  cfg = two_class_config(1, 5, 0.5);
  cfg.classes.resize(1);
  cfg.bias.clear();
  CHECK_THROWS_AS(generate_shapes(cfg), ConfigError);
  cfg = two_class_config(1, 5, 0.5);
  cfg.image_size = 32;
  CHECK_THROWS_AS(generate_shapes(cfg), ConfigError);
  cfg = two_class_config(1, 5, 1.5);
  CHECK_THROWS_AS(generate_shapes(cfg), ConfigError);
}

TEST_CASE("class-incremental split") {
  ShapesConfig cfg;
  cfg.seed = 2;
  cfg.n_images = 300;
  cfg.classes.assign(default_archetypes().begin(), default_archetypes().begin() + 4);
  cfg.bias = {{1, 3, 0.7, 1}, {2, 4, 0.4, 1}};
  const auto ds = generate_shapes(cfg);
  const auto tasks = split_class_incremental(ds, {2, 2});
  REQUIRE(tasks.size() == 2);
  CHECK(tasks[0].task.class_ids == std::vector<int>{1, 2});
  CHECK(tasks[1].task.class_ids == std::vector<int>{3, 4});
  CHECK(tasks[1].task.task_index == 2);

  std::size_t total = 0;
  std::set<std::string> shared;
  for (const auto& t : tasks) {
    const std::set<int> own(t.task.class_ids.begin(), t.task.class_ids.end());
    const auto by_image = t.data.annotations_by_image();
    CHECK(t.data.class_names == ds.class_names);
    for (const auto& a : t.data.annotations) REQUIRE(own.count(a.class_id));
    for (const auto& img : t.data.images) REQUIRE(by_image.count(img.image_id));
    total += t.data.annotations.size();
    t.data.validate();
  }
  CHECK(total == ds.annotations.size());
  std::set<std::string> ids0;
  for (const auto& img : tasks[0].data.images) ids0.insert(img.image_id);
  int both = 0;
  for (const auto& img : tasks[1].data.images) both += ids0.count(img.image_id) ? 1 : 0;
  CHECK(both > 0);

  CHECK_THROWS_AS(split_class_incremental(ds, {3, 2}), ConfigError);
  CHECK(split_class_incremental(ds, {3, 1})[1].task.class_ids == std::vector<int>{4});
}

TEST_CASE("class-incremental split keeps shared images in both views") {
  Dataset ds;
  ds.class_names = {"chair", "table"};
  ds.images = {{"x", 64, 64, "", ""}};
  ds.annotations = {{"x", 1, {0, 0, 10, 10}, false}, {"x", 2, {20, 20, 40, 40}, false}};
  const auto tasks = split_class_incremental(ds, {1, 1});
  CHECK(tasks[0].data.images.size() == 1);
  CHECK(tasks[1].data.images.size() == 1);
  CHECK(tasks[0].data.annotations == std::vector<Annotation>{ds.annotations[0]});
  CHECK(tasks[1].data.annotations == std::vector<Annotation>{ds.annotations[1]});
}

TEST_CASE("VOC class split by alphabetical order") {
  Dataset ds;
  ds.class_names = voc_class_names();
  const auto t = split_class_incremental(ds, {10, 10});
  CHECK(ds.class_names[t[0].task.class_ids.back() - 1] == "cow");
  CHECK(ds.class_names[t[1].task.class_ids.front() - 1] == "diningtable");
  CHECK(ds.class_names[t[1].task.class_ids.back() - 1] == "tvmonitor");
  const auto t19 = split_class_incremental(ds, {19, 1});
  CHECK(t19[1].task.class_ids == std::vector<int>{20});
}

TEST_CASE("domain-incremental split partitions images") {
  Dataset ds;
  ds.class_names = {"a", "b"};
  const std::vector<std::string> tags{"d1", "d2", "d3", "d4"};
  for (int i = 0; i < 20; ++i) {
    const std::string id = "i" + std::to_string(i);
    ds.images.push_back({id, 64, 64, "", tags[i % 4]});
    ds.annotations.push_back({id, 1 + i % 2, {0, 0, 5, 5}, false});
  }
  const auto tasks = split_domain_incremental(ds, tags);
  REQUIRE(tasks.size() == 4);
  std::set<std::string> seen;
  std::size_t anns = 0;
  for (const auto& t : tasks) {
    CHECK(t.task.mode == IncrementMode::kDomain);
    CHECK(t.task.class_ids == std::vector<int>{1, 2});
    for (const auto& img : t.data.images) {
      CHECK(img.domain == t.task.domain_tag);
      CHECK(seen.insert(img.image_id).second);
    }
    anns += t.data.annotations.size();
  }
  CHECK(seen.size() == ds.images.size());
  CHECK(anns == ds.annotations.size());
  CHECK_THROWS_AS(split_domain_incremental(ds, {"d1", "d2"}), ConfigError);
}

TEST_CASE("VOC XML ingestion") {
  const auto dir = scratch_dir("voc");
  write_text(dir / "000001.xml",
             "<annotation><filename>000001.jpg</filename><size><width>64</width><height>48</height>"
             "<depth>3</depth></size><object><name>chair</name><difficult>0</difficult>"
             "<bndbox><xmin>1</xmin><ymin>1</ymin><xmax>11</xmax><ymax>11</ymax></bndbox></object>"
             "<object><name>dog</name><difficult>1</difficult>"
             "<bndbox><xmin>5</xmin><ymin>6</ymin><xmax>20</xmax><ymax>30</ymax></bndbox></object>"
             "</annotation>");
  write_text(dir / "split.txt", "000001\n");
  const auto ds = load_voc(dir, dir / "split.txt");
  REQUIRE(ds.images.size() == 1);
  CHECK(ds.images[0].width == 64);
  CHECK(ds.images[0].height == 48);
  REQUIRE(ds.annotations.size() == 2);
  CHECK(ds.annotations[0].class_id == 9);
  CHECK(ds.class_names[8] == "chair");
  CHECK(ds.annotations[0].box == Box{0, 0, 11, 11});
  CHECK(ds.annotations[1].difficult);
  CHECK(ds.annotations[1].box == Box{4, 5, 20, 30});
  ds.validate();

  write_text(dir / "empty.txt", "");
  const auto empty = load_voc(dir, dir / "empty.txt");
  CHECK(empty.images.empty());
  CHECK(empty.annotations.empty());
  CHECK(empty.class_names.size() == 20);
}

TEST_CASE("VOC ingestion errors name the file") {
  const auto dir = scratch_dir("voc_bad");
  write_text(dir / "a.xml", "<annotation><size><width>4</width>");
  write_text(dir / "b.xml",
             "<annotation><size><width>64</width><height>64</height></size><object><name>unicorn</name>"
             "<bndbox><xmin>1</xmin><ymin>1</ymin><xmax>3</xmax><ymax>3</ymax></bndbox></object></annotation>");
  write_text(dir / "sa.txt", "a\n");
  write_text(dir / "sb.txt", "b\n");
  write_text(dir / "sc.txt", "c\n");
  for (const auto& [split, file] : std::vector<std::pair<std::string, std::string>>{
           {"sa.txt", "a.xml"}, {"sb.txt", "b.xml"}, {"sc.txt", "c.xml"}}) {
    try {
      load_voc(dir, dir / split);
      FAIL("expected IngestionError");
    } catch (const IngestionError& e) {
      CHECK(fs::path(e.file()).filename() == file);
    }
  }
}

TEST_CASE("COCO ingestion and remapping") {
  const auto dir = scratch_dir("coco");
  write_text(dir / "a.json",
             R"({"images":[{"id":5,"width":64,"height":64,"file_name":"x.jpg"}],)"
             R"("categories":[{"id":7,"name":"dog"},{"id":3,"name":"car"}],)"
             R"("annotations":[{"id":1,"image_id":5,"category_id":7,"bbox":[10,20,5,5]},)"
             R"({"id":2,"image_id":5,"category_id":3,"bbox":[0,0,4,4],"iscrowd":1}]})");
  const auto ds = load_coco(dir / "a.json");
  CHECK(ds.class_names == std::vector<std::string>{"car", "dog"});
  REQUIRE(ds.annotations.size() == 2);
  CHECK(ds.annotations[0].class_id == 2);
  CHECK(ds.annotations[0].box == Box{10, 20, 15, 25});
  CHECK(ds.annotations[1].class_id == 1);
  CHECK(ds.annotations[1].difficult);

  write_text(dir / "bad.json", R"({"images":[],"categories":[],"annotations":[{"image_id":1,"category_id":1,"bbox":[0,0,1,1]}]})");
  CHECK_THROWS_AS(load_coco(dir / "bad.json"), IngestionError);
  write_text(dir / "broken.json", "{");
  CHECK_THROWS_AS(load_coco(dir / "broken.json"), IngestionError);
}

TEST_CASE("COCO export round-trips") {
  const auto dir = scratch_dir("coco_rt");
  Dataset ds;
  ds.class_names = {"car", "dog", "cat"};
  Rng rng(3);
  for (int i = 1; i <= 30; ++i) {
    ds.images.push_back({std::to_string(i), 64, 64, "img" + std::to_string(i) + ".png", i % 2 ? "x" : ""});
    for (int k = 0; k < 3; ++k) {
      const double x = rng.between(0, 40) * 0.5, y = rng.between(0, 40) * 0.5;
      ds.annotations.push_back({std::to_string(i), rng.between(1, 3),
                                {x, y, x + rng.between(1, 40) * 0.25, y + rng.between(1, 40) * 0.25},
                                rng.bernoulli(0.2)});
    }
  }
  save_coco(ds, dir / "out.json");
  CHECK(load_coco(dir / "out.json") == ds);
}

TEST_CASE("canonical dataset document round-trips") {
  const auto dir = scratch_dir("canon");
  auto ds = generate_shapes(two_class_config(8, 40, 0.5));
  ds.images[0].domain = "night";
  ds.annotations[0].difficult = true;
  write_dataset(ds, dir / "d.json");
  CHECK(read_dataset(dir / "d.json") == ds);
  const auto views = split_class_incremental(ds, {1, 1});
  write_task_view(views[1], dir / "t.json");
  CHECK(read_task_view(dir / "t.json") == views[1]);
}

TEST_CASE("horizontal flip") {
  Image img({3, 2, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<Real>(i);
  const Image f = flip_horizontal(img);
  CHECK(f.at(0, 0, 0) == img.at(0, 0, 2));
  CHECK(f.at(2, 1, 2) == img.at(2, 1, 0));
  CHECK(flip_horizontal(f) == img);
  const auto anns = flip_horizontal(std::vector<Annotation>{{"a", 1, {1, 2, 4, 5}, false}}, 10.0);
  CHECK(anns[0].box == Box{6, 2, 9, 5});
}

TEST_CASE("image store decodes files and serves synthetic images") {
  const auto dir = scratch_dir("img");
  Image img({3, 4, 5});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<Real>(i % 256) / 255.0f;
  write_ppm(img, dir / "a.ppm");
  ImageStore store;
  const auto loaded = store.load({"a", 5, 4, (dir / "a.ppm").string(), ""});
  REQUIRE(loaded->shape == img.shape);
  for (std::size_t i = 0; i < img.size(); ++i) REQUIRE(std::abs((*loaded)[i] - img[i]) < 1e-6);
  CHECK(store.load({"a", 5, 4, (dir / "a.ppm").string(), ""}) == loaded);
  CHECK_THROWS_AS(store.load({"b", 6, 4, (dir / "a.ppm").string(), ""}), InvalidInput);
  CHECK_THROWS_AS(store.load({"c", 6, 4, (dir / "missing.png").string(), ""}), IngestionError);
}
