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
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "codkit/data.hpp"
#include "codkit/detector.hpp"
#include "codkit/distill.hpp"
#include "codkit/eval.hpp"
#include "codkit/trainer.hpp"

namespace codkit {

// Flat "section.key" -> value store backing the INI run configuration.
class ConfigMap {
 public:
  static ConfigMap from_ini(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  void merge(const ConfigMap& other);  // other wins
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::optional<std::string> find(const std::string& key) const;

  std::string get(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;
  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  std::string to_ini() const;
  std::string hash() const;  // 16 hex digits of a 64-bit FNV-1a over to_ini()

  // Throws ConfigError naming the first key outside the known schema.
  void check_keys() const;

 private:
  std::map<std::string, std::string> values_;
};

// Named configurations: desk-{ours,filod,finetune,joint} on synthetic shapes
// and {voc10+10,voc15+5,voc19+1,coco40+40}-{ours,filod}.
ConfigMap config_preset(const std::string& name);
std::vector<std::string> config_preset_names();

// Base configuration: built-in defaults, then preset (if the file or the
// overrides name one), then the file, then the overrides.
ConfigMap resolve_config(const std::optional<std::filesystem::path>& file, const ConfigMap& overrides);

struct BenchmarkData {
  std::vector<TaskView> tasks;
  Dataset test;
};

// Loads or generates the dataset described by [dataset] and splits it per
// [benchmark].
BenchmarkData build_benchmark(const ConfigMap& cfg);

TrainConfig trainer_config(const ConfigMap& cfg, int task_index);  // [trainer], then [taskN]
DistillConfig distill_config(const ConfigMap& cfg);
ArchConfig arch_config(const ConfigMap& cfg);
std::uint64_t run_seed(const ConfigMap& cfg);

}  // namespace codkit
