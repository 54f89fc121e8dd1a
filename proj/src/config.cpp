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

#include "codkit/config.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "codkit/error.hpp"

namespace codkit {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "run.seed", "run.output_dir", "run.arch", "run.protocol", "run.preset",
      "dataset.source", "dataset.path", "dataset.split", "dataset.image_dir", "dataset.test_path",
      "dataset.test_split", "dataset.test_image_dir", "dataset.classes", "dataset.n_train", "dataset.n_test",
      "dataset.image_size", "dataset.min_objects", "dataset.max_objects", "dataset.bias", "dataset.noise",
      "dataset.min_box", "dataset.max_box",
      "benchmark.mode", "benchmark.sizes", "benchmark.domains",
      "distill.preset", "distill.feature", "distill.rpn", "distill.roi", "distill.loss", "distill.delta",
      "distill.selective", "distill.selective_iou", "distill.pool_size", "distill.sample_size",
      "distill.lambda_feature", "distill.lambda_rpn", "distill.lambda_roi", "distill.roi_deltas"};
  return keys;
}

const std::set<std::string>& trainer_keys() {
  static const std::set<std::string> keys = {"preset",       "mode",      "iterations", "batch_size", "lr",
                                             "momentum",     "weight_decay", "lr_decay", "eval_every", "hflip"};
  return keys;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config key '" + key + "': '" + value + "' is not " + expected);
}

}  // namespace

ConfigMap ConfigMap::from_ini(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("cannot parse config: ") + e.what());
  }
  ConfigMap m;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      throw ConfigError("config key '" + section + "' must live inside a [section]");
    }
    for (const auto& [key, value] : body) m.set(section + "." + key, value.get_value<std::string>());
  }
  return m;
}

void ConfigMap::set(const std::string& key, const std::string& value) { values_[key] = trim(value); }

void ConfigMap::merge(const ConfigMap& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::optional<std::string> ConfigMap::find(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string ConfigMap::get(const std::string& key, const std::string& fallback) const {
  return find(key).value_or(fallback);
}

int ConfigMap::get_int(const std::string& key, int fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const long long x = std::stoll(*v, &used);
    if (used != v->size()) bad_value(key, *v, "an integer");
    return static_cast<int>(x);
  } catch (const std::logic_error&) {
    bad_value(key, *v, "an integer");
  }
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const double x = std::stod(*v, &used);
    if (used != v->size()) bad_value(key, *v, "a number");
    return x;
  } catch (const std::logic_error&) {
    bad_value(key, *v, "a number");
  }
}

bool ConfigMap::get_bool(const std::string& key, bool fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  bad_value(key, *v, "a boolean");
}

std::vector<int> ConfigMap::get_int_list(const std::string& key, const std::vector<int>& fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  std::vector<int> out;
  for (const auto& item : split(*v, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) bad_value(key, *v, "a list of integers");
    } catch (const std::logic_error&) {
      bad_value(key, *v, "a list of integers");
    }
  }
  return out;
}

std::vector<std::string> ConfigMap::get_list(const std::string& key, const std::vector<std::string>& fallback) const {
  const auto v = find(key);
  return v ? split(*v, ',') : fallback;
}

std::string ConfigMap::to_ini() const {
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
  for (const auto& [k, v] : values_) {
    const auto dot = k.find('.');
    sections[k.substr(0, dot)].emplace_back(k.substr(dot + 1), v);
  }
  std::ostringstream os;
  for (const auto& [s, kvs] : sections) {
    os << '[' << s << "]\n";
    for (const auto& [k, v] : kvs) os << k << " = " << v << '\n';
  }
  return os.str();
}

std::string ConfigMap::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const unsigned char c : to_ini()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void ConfigMap::check_keys() const {
  for (const auto& [k, v] : values_) {
    if (known_keys().count(k)) continue;
    const auto dot = k.find('.');
    const std::string section = k.substr(0, dot), key = k.substr(dot + 1);
    const bool task_section = section.rfind("task", 0) == 0 && section.size() > 4 &&
                              std::all_of(section.begin() + 4, section.end(), ::isdigit);
    if ((section == "trainer" || task_section) && trainer_keys().count(key)) continue;
    throw ConfigError("unknown config key '" + k + "'");
  }
}

// ---------------------------------------------------------------- presets

namespace {

ConfigMap defaults() {
  ConfigMap m;
  m.set("run.seed", "1");
  m.set("run.output_dir", "runs/default");
  m.set("run.arch", "toy");
  m.set("run.protocol", "voc50");
  m.set("dataset.source", "synthetic");
  m.set("benchmark.mode", "class");
  return m;
}

ConfigMap desk_base() {
  ConfigMap m;
  m.set("run.output_dir", "runs/desk");
  m.set("dataset.source", "synthetic");
  m.set("dataset.classes", "6");
  m.set("dataset.n_train", "1000");
  m.set("dataset.n_test", "300");
  m.set("dataset.image_size", "64");
  m.set("dataset.bias", "1>4:0.9, 2>5:0.5");
  m.set("benchmark.sizes", "3,3");
  m.set("trainer.iterations", "1000");
  m.set("trainer.batch_size", "4");
  m.set("trainer.lr", "0.01");
  m.set("trainer.lr_decay", "750");
  m.set("trainer.hflip", "true");
  m.set("task1.mode", "finetune");
  m.set("task2.lr", "0.002");
  return m;
}

}  // namespace

std::vector<std::string> config_preset_names() {
  std::vector<std::string> names = {"desk-ours", "desk-filod", "desk-finetune", "desk-joint"};
  for (const char* b : {"voc10+10", "voc15+5", "voc19+1", "coco40+40"})
    for (const char* v : {"-ours", "-filod"}) names.push_back(std::string(b) + v);
  return names;
}

ConfigMap config_preset(const std::string& name) {
  ConfigMap m;
  if (name.rfind("desk-", 0) == 0) {
    m = desk_base();
    const std::string v = name.substr(5);
    if (v == "ours" || v == "filod") {
      m.set("task2.mode", "distill");
      m.set("distill.preset", v);
    } else if (v == "finetune") {
      m.set("task2.mode", "finetune");
    } else if (v == "joint") {
      m.set("benchmark.sizes", "6");
      m.set("task1.mode", "joint");
      m.set("trainer.iterations", "1333");
      m.set("trainer.lr_decay", "1000");
    } else {
      throw ConfigError("unknown preset '" + name + "'");
    }
    return m;
  }
  const auto dash = name.rfind('-');
  if (dash == std::string::npos) throw ConfigError("unknown preset '" + name + "'");
  const std::string bench = name.substr(0, dash), variant = name.substr(dash + 1);
  if (variant != "ours" && variant != "filod") throw ConfigError("unknown preset '" + name + "'");
  if (bench == "voc10+10" || bench == "voc15+5" || bench == "voc19+1") {
    m.set("dataset.source", "voc");
    m.set("run.arch", "frcnn-vgg16");
    m.set("benchmark.sizes", bench == "voc10+10" ? "10,10" : bench == "voc15+5" ? "15,5" : "19,1");
  } else if (bench == "coco40+40") {
    m.set("dataset.source", "coco");
    m.set("run.arch", "frcnn-vgg16");
    m.set("run.protocol", "coco");
    m.set("benchmark.sizes", "40,40");
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  m.set("run.output_dir", "runs/" + name);
  m.set("trainer.preset", bench);
  m.set("task1.mode", "finetune");
  m.set("task2.mode", "distill");
  m.set("distill.preset", variant);
  return m;
}

ConfigMap resolve_config(const std::optional<std::filesystem::path>& file, const ConfigMap& overrides) {
  ConfigMap from_file;
  if (file) from_file = ConfigMap::from_ini(*file);
  ConfigMap m = defaults();
  const auto preset = overrides.find("run.preset") ? overrides.find("run.preset") : from_file.find("run.preset");
  if (preset) m.merge(config_preset(*preset));
  m.merge(from_file);
  m.merge(overrides);
  m.check_keys();
  return m;
}

// ---------------------------------------------------------------- typed views

std::uint64_t run_seed(const ConfigMap& cfg) {
  const int s = cfg.get_int("run.seed", 1);
  if (s < 0) throw ConfigError("run.seed must be >= 0");
  return static_cast<std::uint64_t>(s);
}

ArchConfig arch_config(const ConfigMap& cfg) { return arch_preset(cfg.get("run.arch", "toy")); }

DistillConfig distill_config(const ConfigMap& cfg) {
  DistillConfig d;
  const auto preset = cfg.get("distill.preset", "filod");
  if (preset == "ours") {
    d = DistillConfig::selective_huber();
  } else if (preset == "filod") {
    d = DistillConfig::faster_ilod();
  } else {
    throw ConfigError("distill.preset must be 'ours' or 'filod'");
  }
  d.enable_feature = cfg.get_bool("distill.feature", d.enable_feature);
  d.enable_rpn = cfg.get_bool("distill.rpn", d.enable_rpn);
  d.enable_roi = cfg.get_bool("distill.roi", d.enable_roi);
  if (const auto v = cfg.find("distill.loss")) d.roi_loss_kind = roi_loss_kind_from_string(*v);
  d.huber_delta = cfg.get_double("distill.delta", d.huber_delta);
  d.selective = cfg.get_bool("distill.selective", d.selective);
  d.selective_iou_threshold = cfg.get_double("distill.selective_iou", d.selective_iou_threshold);
  d.pool_size = cfg.get_int("distill.pool_size", d.pool_size);
  d.sample_size = cfg.get_int("distill.sample_size", d.sample_size);
  d.lambda_feature = cfg.get_double("distill.lambda_feature", d.lambda_feature);
  d.lambda_rpn = cfg.get_double("distill.lambda_rpn", d.lambda_rpn);
  d.lambda_roi = cfg.get_double("distill.lambda_roi", d.lambda_roi);
  d.distill_roi_deltas = cfg.get_bool("distill.roi_deltas", d.distill_roi_deltas);
  d.validate();
  return d;
}

TrainConfig trainer_config(const ConfigMap& cfg, int task_index) {
  const std::string task = "task" + std::to_string(task_index) + ".";
  const auto pick = [&](const std::string& key) -> std::string {
    if (cfg.has(task + key)) return task + key;
    return "trainer." + key;
  };
  TrainConfig c;
  if (const auto p = cfg.find(pick("preset"))) c = train_preset(*p);
  if (const auto m = cfg.find(pick("mode"))) c.mode = train_mode_from_string(*m);
  c.iterations = cfg.get_int(pick("iterations"), c.iterations);
  c.batch_size = cfg.get_int(pick("batch_size"), c.batch_size);
  c.learning_rate = cfg.get_double(pick("lr"), c.learning_rate);
  c.momentum = cfg.get_double(pick("momentum"), c.momentum);
  c.weight_decay = cfg.get_double(pick("weight_decay"), c.weight_decay);
  c.lr_decay_steps = cfg.get_int_list(pick("lr_decay"), c.lr_decay_steps);
  c.eval_every = cfg.get_int(pick("eval_every"), c.eval_every);
  c.horizontal_flip = cfg.get_bool(pick("hflip"), c.horizontal_flip);
  c.seed = mix_seed(run_seed(cfg), 100 + static_cast<std::uint64_t>(task_index));
  if (c.mode == TrainMode::kDistill) c.distill = distill_config(cfg);
  c.validate();
  return c;
}

namespace {

std::vector<CooccurrenceBias> parse_bias(const std::string& spec) {
  std::vector<CooccurrenceBias> out;
  for (const auto& item : split(spec, ',')) {
    CooccurrenceBias b;
    char extra = 0;
    int count = 1;
    const int n = std::sscanf(item.c_str(), "%d>%d:%lfx%d%c", &b.from_class, &b.to_class, &b.probability, &count,
                              &extra);
    if (n < 3 || n > 4) throw ConfigError("dataset.bias entry '" + item + "' is not from>to:p[xcount]");
    b.count = count;
    out.push_back(b);
  }
  return out;
}

std::string required_path(const ConfigMap& cfg, const std::string& key) {
  const auto v = cfg.find(key);
  if (!v || v->empty()) throw ConfigError("config key '" + key + "' is required for this dataset source");
  if (!std::filesystem::exists(*v)) throw ConfigError("path in '" + key + "' does not exist: " + *v);
  return *v;
}

std::pair<Dataset, Dataset> load_source(const ConfigMap& cfg) {
  const auto source = cfg.get("dataset.source", "synthetic");
  if (source == "synthetic") {
    ShapesConfig sc;
    const int classes = cfg.get_int("dataset.classes", 6);
    const auto archetypes = default_archetypes();
    if (classes < 1 || classes > static_cast<int>(archetypes.size())) {
      throw ConfigError("dataset.classes must lie in [1, " + std::to_string(archetypes.size()) + "]");
    }
    sc.classes.assign(archetypes.begin(), archetypes.begin() + classes);
    sc.image_size = cfg.get_int("dataset.image_size", sc.image_size);
    sc.min_objects = cfg.get_int("dataset.min_objects", sc.min_objects);
    sc.max_objects = cfg.get_int("dataset.max_objects", sc.max_objects);
    sc.min_box = cfg.get_int("dataset.min_box", sc.min_box);
    sc.max_box = cfg.get_int("dataset.max_box", sc.max_box);
    sc.noise = cfg.get_double("dataset.noise", sc.noise);
    sc.bias = parse_bias(cfg.get("dataset.bias", ""));
    const std::uint64_t seed = run_seed(cfg);
    ShapesConfig train = sc, test = sc;
    train.seed = mix_seed(seed, 11);
    train.n_images = cfg.get_int("dataset.n_train", 1000);
    train.id_prefix = "train";
    test.seed = mix_seed(seed, 12);
    test.n_images = cfg.get_int("dataset.n_test", 300);
    test.id_prefix = "test";
    return {generate_shapes(train), generate_shapes(test)};
  }
  if (source == "voc") {
    return {load_voc(required_path(cfg, "dataset.path"), required_path(cfg, "dataset.split"),
                     cfg.get("dataset.image_dir", "")),
            load_voc(required_path(cfg, "dataset.test_path"), required_path(cfg, "dataset.test_split"),
                     cfg.get("dataset.test_image_dir", cfg.get("dataset.image_dir", "")))};
  }
  if (source == "coco") {
    return {load_coco(required_path(cfg, "dataset.path"), cfg.get("dataset.image_dir", "")),
            load_coco(required_path(cfg, "dataset.test_path"),
                      cfg.get("dataset.test_image_dir", cfg.get("dataset.image_dir", "")))};
  }
  if (source == "canonical-json") {
    return {read_dataset(required_path(cfg, "dataset.path")), read_dataset(required_path(cfg, "dataset.test_path"))};
  }
  throw ConfigError("dataset.source must be synthetic, voc, coco or canonical-json");
}

}  // namespace

BenchmarkData build_benchmark(const ConfigMap& cfg) {
  auto [train, test] = load_source(cfg);
  BenchmarkData b;
  const auto mode = cfg.get("benchmark.mode", "class");
  if (mode == "class") {
    const auto sizes = cfg.get_int_list("benchmark.sizes", {train.class_count()});
    b.tasks = split_class_incremental(train, sizes);
  } else if (mode == "domain") {
    const auto domains = cfg.get_list("benchmark.domains", {});
    if (domains.empty()) throw ConfigError("benchmark.domains is required in domain mode");
    b.tasks = split_domain_incremental(train, domains);
  } else {
    throw ConfigError("benchmark.mode must be 'class' or 'domain'");
  }
  b.test = std::move(test);
  return b;
}

}  // namespace codkit
