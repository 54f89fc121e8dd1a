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
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "codkit/data.hpp"
#include "codkit/detector.hpp"
#include "codkit/distill.hpp"
#include "codkit/eval.hpp"

namespace codkit {

enum class TrainMode { kJoint, kFinetune, kFreezeBackbone, kDistill };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

struct TrainConfig {
  TrainMode mode = TrainMode::kJoint;
  int iterations = 1000;
  int batch_size = 4;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<int> lr_decay_steps;  // lr is divided by 10 at each
  std::uint64_t seed = 0;
  int eval_every = 0;  // 0 disables intermediate evaluation
  bool horizontal_flip = false;
  DistillConfig distill;

  void validate() const;
  double lr_at(int iteration) const;
};

// Hyper-parameter presets for the standard benchmarks: "voc10+10",
// "voc15+5", "voc19+1" (lr 1e-4), "voc19+1-lr1e-3", "coco40+40".
TrainConfig train_preset(const std::string& name);
std::vector<std::string> train_preset_names();

struct LedgerRow {
  int iteration = 0;
  double learning_rate = 0.0;
  DetectionLosses detection;
  DistillBreakdown distill;
  double total = 0.0;
  double wall_seconds = 0.0;
};

class RunLedger {
 public:
  void append(const LedgerRow& row);
  void add_eval(int iteration, const EvalReport& report) { evals_.emplace_back(iteration, report); }
  void add_checkpoint(const std::string& manifest) { checkpoints_.push_back(manifest); }

  const std::vector<LedgerRow>& rows() const { return rows_; }
  const std::vector<std::pair<int, EvalReport>>& evals() const { return evals_; }
  const std::vector<std::string>& checkpoints() const { return checkpoints_; }
  std::vector<LedgerRow> last(std::size_t n) const;

  void write_csv(const std::filesystem::path& path) const;
  nlohmann::json summary() const;

 private:
  std::vector<LedgerRow> rows_;
  std::vector<std::pair<int, EvalReport>> evals_;
  std::vector<std::string> checkpoints_;
};

// CSV header followed by one line per row.
std::vector<std::string> format_ledger_rows(const std::vector<LedgerRow>& rows);

struct TrainResult {
  DetectorState state;
  RunLedger ledger;
};

using EvalHook = std::function<EvalReport(int iteration, const DetectorState& state)>;

// Deep, immutable copy of a detector.
TeacherSnapshot snapshot_teacher(const DetectorState& state);
inline TeacherSnapshot snapshot_teacher(const TeacherSnapshot& snapshot) { return snapshot; }

// SGD with momentum over one task. A teacher is required exactly when the
// mode is distill. Throws TrainingFault on a non-finite loss.
TrainResult train_task(DetectorState state, const TeacherSnapshot& teacher, const TaskView& task,
                       const TrainConfig& cfg, ImageStore& store, const EvalHook& on_eval = {});

// Runs inference over every image of \p test and evaluates the result.
EvalReport evaluate_model(const DetectorState& state, const Dataset& test, ImageStore& store,
                          IouProtocol protocol, const std::vector<std::vector<int>>& task_groups = {},
                          const InferenceOptions& options = {}, std::vector<Detection>* detections = nullptr);

struct SequenceTask {
  TaskView train;
  TrainConfig config;
};

struct SequenceOptions {
  ArchConfig arch = arch_preset("toy");
  std::uint64_t seed = 0;
  IouProtocol protocol = IouProtocol::kVoc50;
  InferenceOptions inference;
  std::filesystem::path output_dir;  // empty: nothing is written
};

struct TaskOutcome {
  std::filesystem::path checkpoint;
  EvalReport report;
  RunLedger ledger;
};

struct SequenceResult {
  std::vector<TaskOutcome> outcomes;
  std::vector<std::vector<double>> map_matrix;  // [after task][task], lower-triangular
  std::vector<double> forgetting;
  DetectorState final_state;
};

// Trains the tasks in order. The model after each task is the teacher of the
// next distill-mode task; the first task is always trained without one.
SequenceResult run_sequence(const std::vector<SequenceTask>& tasks, const Dataset& test_set, ImageStore& store,
                            const SequenceOptions& options);

nlohmann::json to_json(const SequenceResult& result);

}  // namespace codkit
