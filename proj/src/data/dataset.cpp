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

#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <json.hpp>

#include "codkit/data.hpp"
#include "codkit/error.hpp"

namespace codkit {

namespace fs = std::filesystem;
using nlohmann::json;

void Dataset::validate() const {
  std::set<std::string> ids;
  for (const auto& img : images) {
    if (img.width <= 0 || img.height <= 0) {
      throw InvalidInput("image " + img.image_id + " has non-positive size");
    }
    if (!ids.insert(img.image_id).second) {
      throw InvalidInput("duplicate image id " + img.image_id);
    }
  }
  for (const auto& ann : annotations) {
    if (!ids.count(ann.image_id)) {
      throw InvalidInput("annotation references unknown image " + ann.image_id);
    }
    if (ann.class_id < 1 || ann.class_id > class_count()) {
      throw InvalidInput("annotation class id " + std::to_string(ann.class_id) + " out of range");
    }
    codkit::validate(ann.box);
  }
}

std::map<std::string, std::vector<std::size_t>> Dataset::annotations_by_image() const {
  std::map<std::string, std::vector<std::size_t>> out;
  for (const auto& img : images) out[img.image_id];
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    out[annotations[i].image_id].push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------- VOC

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace

Dataset load_voc(const fs::path& annotation_dir, const fs::path& split_file,
                 const fs::path& image_dir) {
  namespace pt = boost::property_tree;
  Dataset ds;
  ds.class_names = voc_class_names();
  std::map<std::string, int> class_of;
  for (int i = 0; i < ds.class_count(); ++i) class_of[ds.class_names[i]] = i + 1;

  std::ifstream split(split_file);
  if (!split) throw IngestionError(split_file.string(), "cannot open split file");
  std::string line;
  while (std::getline(split, line)) {
    const std::string id = trim(line);
    if (id.empty()) continue;
    const fs::path xml_path = annotation_dir / (id + ".xml");
    if (!fs::exists(xml_path)) throw IngestionError(xml_path.string(), "missing annotation file");
    pt::ptree tree;
    try {
      pt::read_xml(xml_path.string(), tree);
    } catch (const pt::xml_parser_error& e) {
      throw IngestionError(xml_path.string(), std::string("malformed XML: ") + e.message());
    }
    try {
      const auto& root = tree.get_child("annotation");
      ImageRecord rec;
      rec.image_id = id;
      rec.width = root.get<int>("size.width");
      rec.height = root.get<int>("size.height");
      const std::string filename = root.get<std::string>("filename", id + ".jpg");
      rec.source = image_dir.empty() ? filename : (image_dir / filename).string();
      ds.images.push_back(rec);
      for (const auto& [key, node] : root) {
        if (key != "object") continue;
        const std::string name = trim(node.get<std::string>("name"));
        const auto cls = class_of.find(name);
        if (cls == class_of.end()) {
          throw IngestionError(xml_path.string(), "unknown class name '" + name + "'");
        }
        Annotation ann;
        ann.image_id = id;
        ann.class_id = cls->second;
        ann.difficult = node.get<int>("difficult", 0) != 0;
        ann.box.x_min = node.get<double>("bndbox.xmin") - 1.0;
        ann.box.y_min = node.get<double>("bndbox.ymin") - 1.0;
        ann.box.x_max = node.get<double>("bndbox.xmax");
        ann.box.y_max = node.get<double>("bndbox.ymax");
        if (!ann.box.valid()) throw IngestionError(xml_path.string(), "degenerate bndbox");
        ds.annotations.push_back(ann);
      }
    } catch (const pt::ptree_error& e) {
      throw IngestionError(xml_path.string(), std::string("malformed annotation: ") + e.what());
    }
  }
  return ds;
}

// ---------------------------------------------------------------- COCO

Dataset load_coco(const fs::path& annotation_json, const fs::path& image_dir) {
  std::ifstream in(annotation_json);
  if (!in) throw IngestionError(annotation_json.string(), "cannot open file");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw IngestionError(annotation_json.string(), std::string("malformed JSON: ") + e.what());
  }
  Dataset ds;
  try {
    std::vector<std::pair<long long, std::string>> cats;
    for (const auto& c : doc.at("categories")) {
      cats.emplace_back(c.at("id").get<long long>(), c.at("name").get<std::string>());
    }
    std::sort(cats.begin(), cats.end());
    std::map<long long, int> remap;
    for (std::size_t i = 0; i < cats.size(); ++i) {
      remap[cats[i].first] = static_cast<int>(i) + 1;
      ds.class_names.push_back(cats[i].second);
    }
    std::set<std::string> ids;
    for (const auto& im : doc.at("images")) {
      ImageRecord rec;
      rec.image_id = std::to_string(im.at("id").get<long long>());
      rec.width = im.at("width").get<int>();
      rec.height = im.at("height").get<int>();
      const std::string file = im.value("file_name", std::string{});
      rec.source = image_dir.empty() ? file : (image_dir / file).string();
      rec.domain = im.value("domain", std::string{});
      ids.insert(rec.image_id);
      ds.images.push_back(rec);
    }
    for (const auto& a : doc.at("annotations")) {
      Annotation ann;
      ann.image_id = std::to_string(a.at("image_id").get<long long>());
      if (!ids.count(ann.image_id)) {
        throw IngestionError(annotation_json.string(),
                             "annotation references unknown image " + ann.image_id);
      }
      const auto cat = remap.find(a.at("category_id").get<long long>());
      if (cat == remap.end()) {
        throw IngestionError(annotation_json.string(), "annotation references unknown category");
      }
      ann.class_id = cat->second;
      const auto& bb = a.at("bbox");
      const double x = bb.at(0).get<double>(), y = bb.at(1).get<double>();
      ann.box = {x, y, x + bb.at(2).get<double>(), y + bb.at(3).get<double>()};
      ann.difficult = a.value("iscrowd", 0) != 0;
      if (!ann.box.valid()) {
        throw IngestionError(annotation_json.string(), "degenerate bbox in annotation");
      }
      ds.annotations.push_back(ann);
    }
  } catch (const json::exception& e) {
    throw IngestionError(annotation_json.string(), std::string("malformed COCO document: ") + e.what());
  }
  return ds;
}

void save_coco(const Dataset& ds, const fs::path& annotation_json) {
  json doc;
  doc["categories"] = json::array();
  for (int i = 0; i < ds.class_count(); ++i) {
    doc["categories"].push_back({{"id", i + 1}, {"name", ds.class_names[i]}});
  }
  std::map<std::string, long long> numeric;
  doc["images"] = json::array();
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const auto& img = ds.images[i];
    long long id = 0;
    try {
      std::size_t used = 0;
      id = std::stoll(img.image_id, &used);
      if (used != img.image_id.size()) throw std::invalid_argument("id");
    } catch (const std::exception&) {
      id = static_cast<long long>(i) + 1;
    }
    numeric[img.image_id] = id;
    json j = {{"id", id}, {"width", img.width}, {"height", img.height}, {"file_name", img.source}};
    if (!img.domain.empty()) j["domain"] = img.domain;
    doc["images"].push_back(j);
  }
  doc["annotations"] = json::array();
  for (std::size_t i = 0; i < ds.annotations.size(); ++i) {
    const auto& a = ds.annotations[i];
    doc["annotations"].push_back({{"id", i + 1},
                                  {"image_id", numeric.at(a.image_id)},
                                  {"category_id", a.class_id},
                                  {"bbox", {a.box.x_min, a.box.y_min, a.box.width(), a.box.height()}},
                                  {"area", a.box.area()},
                                  {"iscrowd", a.difficult ? 1 : 0}});
  }
  std::ofstream out(annotation_json);
  if (!out) throw Error("cannot write " + annotation_json.string());
  out << doc.dump() << '\n';
}

// ---------------------------------------------------------------- canonical

namespace {

json dataset_to_json(const Dataset& ds) {
  json doc;
  doc["images"] = json::array();
  for (const auto& img : ds.images) {
    doc["images"].push_back({{"id", img.image_id},
                             {"width", img.width},
                             {"height", img.height},
                             {"domain", img.domain},
                             {"source", img.source}});
  }
  doc["annotations"] = json::array();
  for (const auto& a : ds.annotations) {
    doc["annotations"].push_back({{"image_id", a.image_id},
                                  {"class_id", a.class_id},
                                  {"bbox", {a.box.x_min, a.box.y_min, a.box.x_max, a.box.y_max}},
                                  {"difficult", a.difficult}});
  }
  doc["classes"] = ds.class_names;
  return doc;
}

Dataset dataset_from_json(const json& doc, const std::string& origin) {
  Dataset ds;
  try {
    for (const auto& im : doc.at("images")) {
      ImageRecord rec;
      rec.image_id = im.at("id").get<std::string>();
      rec.width = im.at("width").get<int>();
      rec.height = im.at("height").get<int>();
      rec.domain = im.value("domain", std::string{});
      rec.source = im.value("source", std::string{});
      ds.images.push_back(std::move(rec));
    }
    for (const auto& a : doc.at("annotations")) {
      Annotation ann;
      ann.image_id = a.at("image_id").get<std::string>();
      ann.class_id = a.at("class_id").get<int>();
      const auto& bb = a.at("bbox");
      ann.box = {bb.at(0).get<double>(), bb.at(1).get<double>(), bb.at(2).get<double>(),
                 bb.at(3).get<double>()};
      ann.difficult = a.value("difficult", false);
      ds.annotations.push_back(std::move(ann));
    }
    ds.class_names = doc.at("classes").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw IngestionError(origin, std::string("malformed dataset document: ") + e.what());
  }
  try {
    ds.validate();
  } catch (const InvalidInput& e) {
    throw IngestionError(origin, e.what());
  }
  return ds;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError(path.string(), "cannot open file");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IngestionError(path.string(), std::string("malformed JSON: ") + e.what());
  }
}

void write_json_file(const json& doc, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

}  // namespace

Dataset read_dataset(const fs::path& path) { return dataset_from_json(read_json_file(path), path.string()); }

void write_dataset(const Dataset& ds, const fs::path& path) { write_json_file(dataset_to_json(ds), path); }

TaskView read_task_view(const fs::path& path) {
  const json doc = read_json_file(path);
  TaskView view;
  view.data = dataset_from_json(doc, path.string());
  try {
    const auto& t = doc.at("task");
    view.task.task_index = t.at("index").get<int>();
    const std::string mode = t.at("mode").get<std::string>();
    if (mode == "class") {
      view.task.mode = IncrementMode::kClass;
    } else if (mode == "domain") {
      view.task.mode = IncrementMode::kDomain;
    } else {
      throw IngestionError(path.string(), "unknown task mode '" + mode + "'");
    }
    view.task.class_ids = t.at("class_ids").get<std::vector<int>>();
    view.task.domain_tag = t.value("domain", std::string{});
  } catch (const json::exception& e) {
    throw IngestionError(path.string(), std::string("malformed task block: ") + e.what());
  }
  return view;
}

void write_task_view(const TaskView& view, const fs::path& path) {
  json doc = dataset_to_json(view.data);
  doc["task"] = {{"index", view.task.task_index},
                 {"mode", view.task.mode == IncrementMode::kClass ? "class" : "domain"},
                 {"class_ids", view.task.class_ids},
                 {"domain", view.task.domain_tag}};
  write_json_file(doc, path);
}

// ---------------------------------------------------------------- splits

std::vector<TaskView> split_class_incremental(const Dataset& ds, const std::vector<int>& sizes) {
  int total = 0;
  for (const int s : sizes) {
    if (s <= 0) throw ConfigError("task sizes must be positive");
    total += s;
  }
  if (total > ds.class_count()) {
    throw ConfigError("task sizes sum to " + std::to_string(total) + " but the dataset has " +
                      std::to_string(ds.class_count()) + " classes");
  }
  std::vector<TaskView> views;
  int next_class = 1;
  for (std::size_t t = 0; t < sizes.size(); ++t) {
    TaskView view;
    view.task.task_index = static_cast<int>(t) + 1;
    view.task.mode = IncrementMode::kClass;
    for (int k = 0; k < sizes[t]; ++k) view.task.class_ids.push_back(next_class++);
    const int lo = view.task.class_ids.front(), hi = view.task.class_ids.back();
    view.data.class_names = ds.class_names;
    std::set<std::string> present;
    for (const auto& a : ds.annotations) {
      if (a.class_id >= lo && a.class_id <= hi) {
        view.data.annotations.push_back(a);
        present.insert(a.image_id);
      }
    }
    for (const auto& img : ds.images) {
      if (present.count(img.image_id)) view.data.images.push_back(img);
    }
    views.push_back(std::move(view));
  }
  return views;
}

std::vector<TaskView> split_domain_incremental(const Dataset& ds,
                                               const std::vector<std::string>& order) {
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (!slot.emplace(order[i], i).second) throw ConfigError("duplicate domain tag " + order[i]);
  }
  std::vector<TaskView> views(order.size());
  std::vector<int> all_classes(ds.class_count());
  std::iota(all_classes.begin(), all_classes.end(), 1);
  for (std::size_t i = 0; i < order.size(); ++i) {
    views[i].task = {static_cast<int>(i) + 1, IncrementMode::kDomain, all_classes, order[i]};
    views[i].data.class_names = ds.class_names;
  }
  std::map<std::string, std::size_t> task_of_image;
  for (const auto& img : ds.images) {
    const auto it = slot.find(img.domain);
    if (it == slot.end()) {
      throw ConfigError("image " + img.image_id + " has domain tag '" + img.domain +
                        "' outside the domain order");
    }
    views[it->second].data.images.push_back(img);
    task_of_image[img.image_id] = it->second;
  }
  for (const auto& a : ds.annotations) {
    views[task_of_image.at(a.image_id)].data.annotations.push_back(a);
  }
  return views;
}

}  // namespace codkit
