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

#include "codkit/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <tuple>

#include "codkit/error.hpp"

namespace codkit {

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kJoint: return "joint";
    case TrainMode::kFinetune: return "finetune";
    case TrainMode::kFreezeBackbone: return "freeze_backbone";
    case TrainMode::kDistill: return "distill";
  }
  return "joint";
}

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "joint") return TrainMode::kJoint;
  if (name == "finetune") return TrainMode::kFinetune;
  if (name == "freeze_backbone") return TrainMode::kFreezeBackbone;
  if (name == "distill") return TrainMode::kDistill;
  throw ConfigError("unknown training mode '" + name + "'");
}

void TrainConfig::validate() const {
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
  for (std::size_t i = 0; i < lr_decay_steps.size(); ++i) {
    if (lr_decay_steps[i] < 0 || lr_decay_steps[i] >= iterations) {
      throw ConfigError("lr decay steps must lie in [0, iterations)");
    }
    if (i > 0 && lr_decay_steps[i] <= lr_decay_steps[i - 1]) {
      throw ConfigError("lr decay steps must be strictly increasing");
    }
  }
  if (mode == TrainMode::kDistill) distill.validate();
}

double TrainConfig::lr_at(int iteration) const {
  const auto passed = std::count_if(lr_decay_steps.begin(), lr_decay_steps.end(), [&](int s) { return iteration >= s; });
  return learning_rate / std::pow(10.0, static_cast<double>(passed));
}

TrainConfig train_preset(const std::string& name) {
  TrainConfig c;
  if (name == "voc10+10") {
    c.iterations = 20000, c.batch_size = 4, c.learning_rate = 0.001, c.lr_decay_steps = {15000, 17500};
  } else if (name == "voc15+5") {
    c.iterations = 10000, c.batch_size = 4, c.learning_rate = 0.001, c.lr_decay_steps = {7500};
  } else if (name == "voc19+1") {
    c.iterations = 10000, c.batch_size = 1, c.learning_rate = 0.0001;
  } else if (name == "voc19+1-lr1e-3") {
    c.iterations = 10000, c.batch_size = 1, c.learning_rate = 0.001;
  } else if (name == "coco40+40") {
    c.iterations = 90000, c.batch_size = 16, c.learning_rate = 0.02, c.lr_decay_steps = {60000, 80000};
  } else {
    throw ConfigError("unknown training preset '" + name + "'");
  }
  return c;
}

std::vector<std::string> train_preset_names() {
  return {"voc10+10", "voc15+5", "voc19+1", "voc19+1-lr1e-3", "coco40+40"};
}

// ---------------------------------------------------------------- ledger

void RunLedger::append(const LedgerRow& row) {
  if (!rows_.empty() && row.wall_seconds < rows_.back().wall_seconds) {
    throw Error("ledger timestamps must be monotone");
  }
  rows_.push_back(row);
}

std::vector<LedgerRow> RunLedger::last(std::size_t n) const {
  const std::size_t from = rows_.size() > n ? rows_.size() - n : 0;
  return {rows_.begin() + static_cast<std::ptrdiff_t>(from), rows_.end()};
}

namespace {

constexpr const char* kLedgerHeader =
    "iteration,lr,rpn_cls,rpn_reg,roi_cls,roi_reg,distill_feature,distill_rpn,distill_roi,distill_rois,total,"
    "wall_seconds";

void write_row(std::ostream& os, const LedgerRow& r) {
  os << r.iteration << ',' << r.learning_rate << ',' << r.detection.rpn_cls << ',' << r.detection.rpn_reg << ','
     << r.detection.roi_cls << ',' << r.detection.roi_reg << ',' << r.distill.feature << ',' << r.distill.rpn << ','
     << r.distill.roi << ',' << r.distill.roi_count << ',' << r.total << ',' << r.wall_seconds << '\n';
}

}  // namespace

std::vector<std::string> format_ledger_rows(const std::vector<LedgerRow>& rows) {
  std::vector<std::string> lines{kLedgerHeader};
  for (const auto& r : rows) {
    std::ostringstream os;
    os << std::setprecision(8);
    write_row(os, r);
    lines.push_back(os.str().substr(0, os.str().size() - 1));
  }
  return lines;
}

void RunLedger::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  for (const auto& line : format_ledger_rows(rows_)) os << line << '\n';
}

nlohmann::json RunLedger::summary() const {
  nlohmann::json evals = nlohmann::json::array();
  for (const auto& [it, r] : evals_) evals.push_back({{"iteration", it}, {"report", to_json(r)}});
  nlohmann::json j = {{"iterations_logged", rows_.size()}, {"evals", evals}, {"checkpoints", checkpoints_}};
  if (!rows_.empty()) {
    const auto& r = rows_.back();
    j["final"] = {{"iteration", r.iteration}, {"total", r.total}, {"rpn_cls", r.detection.rpn_cls},
                  {"rpn_reg", r.detection.rpn_reg}, {"roi_cls", r.detection.roi_cls},
                  {"roi_reg", r.detection.roi_reg}, {"distill_feature", r.distill.feature},
                  {"distill_rpn", r.distill.rpn}, {"distill_roi", r.distill.roi}};
  }
  return j;
}

// ---------------------------------------------------------------- training

TeacherSnapshot snapshot_teacher(const DetectorState& state) {
  auto copy = std::make_shared<DetectorState>(state);
  copy->trainable = {false, false, false};
  return copy;
}

namespace {

struct Sgd {
  DetectorParams velocity;

  explicit Sgd(const DetectorParams& p) : velocity(p.zeros_like()) {}

  void step(DetectorState& s, const DetectorParams& grads, double lr, double momentum, double weight_decay,
            double grad_scale) {
    std::vector<Tensor*> vel;
    for_each_param(velocity, [&](const std::string&, Component, Tensor& t) { vel.push_back(&t); });
    std::size_t i = 0;
    for_each_param_pair(s.params, grads, [&](const std::string&, Component c, Tensor& p, const Tensor& g) {
      Tensor& v = *vel[i++];
      if (!s.trainable.enabled(c)) return;
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double d = grad_scale * g.data[k] + weight_decay * p.data[k];
        v.data[k] = static_cast<Real>(momentum * v.data[k] + d);
        p.data[k] = static_cast<Real>(p.data[k] - lr * v.data[k]);
      }
    });
  }
};

// Ground truths per image in a canonical order, so that training does not
// depend on how the annotation list was assembled.
std::map<std::string, std::vector<Annotation>> group_annotations(const Dataset& ds) {
  std::map<std::string, std::vector<Annotation>> out;
  for (const auto& a : ds.annotations) out[a.image_id].push_back(a);
  const auto key = [](const Annotation& a) {
    return std::make_tuple(a.class_id, a.box.x_min, a.box.y_min, a.box.x_max, a.box.y_max, a.difficult);
  };
  for (auto& [id, anns] : out)
    std::stable_sort(anns.begin(), anns.end(), [&](const Annotation& x, const Annotation& y) { return key(x) < key(y); });
  return out;
}

std::vector<const ImageRecord*> images_by_id(const Dataset& ds) {
  std::vector<const ImageRecord*> out;
  for (const auto& im : ds.images) out.push_back(&im);
  std::sort(out.begin(), out.end(), [](const ImageRecord* a, const ImageRecord* b) { return a->image_id < b->image_id; });
  return out;
}

}  // namespace

TrainResult train_task(DetectorState state, const TeacherSnapshot& teacher, const TaskView& task,
                       const TrainConfig& cfg, ImageStore& store, const EvalHook& on_eval) {
  cfg.validate();
  const bool distill = cfg.mode == TrainMode::kDistill;
  if (distill != static_cast<bool>(teacher)) {
    throw ConfigError(distill ? "distill mode needs a teacher" : "a teacher is only used in distill mode");
  }
  if (teacher) {
    if (teacher->class_count > state.class_count) throw ConfigError("teacher covers more classes than the student");
    if (to_json(teacher->arch) != to_json(state.arch)) throw ConfigError("teacher and student architectures differ");
  }
  for (const int c : task.task.class_ids) {
    if (c < 1 || c > state.class_count) {
      throw ConfigError("task class " + std::to_string(c) + " is not covered by the detector head");
    }
  }
  if (task.data.images.empty()) throw ConfigError("task " + std::to_string(task.task.task_index) + " has no images");

  state.trainable = {cfg.mode != TrainMode::kFreezeBackbone, true, true};
  state.task_index = task.task.task_index;
  const auto gts_by_image = group_annotations(task.data);
  const auto images = images_by_id(task.data);
  const std::vector<Annotation> no_gts;

  Rng master(cfg.seed);
  Rng order_rng = master.fork(1);
  Rng sample_rng = master.fork(2);
  Sgd sgd(state.params);
  RunLedger ledger;
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  for (int it = 0; it < cfg.iterations; ++it) {
    DetectorParams grads = state.params.zeros_like();
    LedgerRow row;
    row.iteration = it;
    row.learning_rate = cfg.lr_at(it);
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        order = order_rng.permutation(images.size());
        cursor = 0;
      }
      const ImageRecord& rec = *images[order[cursor++]];
      const auto found = gts_by_image.find(rec.image_id);
      std::vector<Annotation> gts = found == gts_by_image.end() ? no_gts : found->second;
      auto image = store.load(rec);
      Image flipped;
      const Image* input = image.get();
      if (cfg.horizontal_flip && order_rng.bernoulli(0.5)) {
        flipped = flip_horizontal(*image);
        gts = flip_horizontal(std::move(gts), rec.width);
        input = &flipped;
      }
      try {
        TrainStep step = forward_train(state, *input, gts, sample_rng);
        DistillBreakdown bd;
        if (distill) bd = distill_step(*teacher, *step.pass, step.proposals, gts, cfg.distill, sample_rng);
        const double total = step.losses.total() + bd.total();
        if (!std::isfinite(total)) throw TrainingFault("non-finite distillation loss", {});
        step.pass->backward(grads);
        const double inv = 1.0 / cfg.batch_size;
        row.detection.rpn_cls += inv * step.losses.rpn_cls;
        row.detection.rpn_reg += inv * step.losses.rpn_reg;
        row.detection.roi_cls += inv * step.losses.roi_cls;
        row.detection.roi_reg += inv * step.losses.roi_reg;
        row.distill.feature += inv * bd.feature;
        row.distill.rpn += inv * bd.rpn;
        row.distill.roi += inv * bd.roi;
        row.distill.roi_count += bd.roi_count;
        row.total += inv * total;
      } catch (const TrainingFault& e) {
        throw TrainingFault(std::string(e.what()) + " at iteration " + std::to_string(it) + " (image " +
                                rec.image_id + ")",
                            format_ledger_rows(ledger.last(10)));
      }
    }
    sgd.step(state, grads, row.learning_rate, cfg.momentum, cfg.weight_decay, 1.0 / cfg.batch_size);
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ledger.append(row);
    if (on_eval && cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0 && it + 1 < cfg.iterations) {
      ledger.add_eval(it + 1, on_eval(it + 1, state));
    }
  }
  if (on_eval) ledger.add_eval(cfg.iterations, on_eval(cfg.iterations, state));
  return {std::move(state), std::move(ledger)};
}

EvalReport evaluate_model(const DetectorState& state, const Dataset& test, ImageStore& store, IouProtocol protocol,
                          const std::vector<std::vector<int>>& task_groups, const InferenceOptions& options,
                          std::vector<Detection>* detections) {
  std::vector<Detection> dets;
  for (const auto& rec : test.images) {
    const auto found = infer(state, *store.load(rec), rec.image_id, options);
    dets.insert(dets.end(), found.begin(), found.end());
  }
  auto report = evaluate(dets, test, protocol, task_groups);
  if (detections) *detections = std::move(dets);
  return report;
}

// ---------------------------------------------------------------- sequences

namespace {

Dataset restrict_classes(const Dataset& ds, const std::set<int>& classes) {
  Dataset out;
  out.images = ds.images;
  out.class_names = ds.class_names;
  for (const auto& a : ds.annotations)
    if (classes.count(a.class_id)) out.annotations.push_back(a);
  return out;
}

Dataset restrict_domain(const Dataset& ds, const std::string& domain) {
  Dataset out;
  out.class_names = ds.class_names;
  std::set<std::string> keep;
  for (const auto& im : ds.images)
    if (im.domain == domain) {
      out.images.push_back(im);
      keep.insert(im.image_id);
    }
  for (const auto& a : ds.annotations)
    if (keep.count(a.image_id)) out.annotations.push_back(a);
  return out;
}

}  // namespace

SequenceResult run_sequence(const std::vector<SequenceTask>& tasks, const Dataset& test_set, ImageStore& store,
                            const SequenceOptions& opt) {
  if (tasks.empty()) throw ConfigError("task sequence is empty");
  const IncrementMode mode = tasks.front().train.task.mode;
  for (const auto& t : tasks)
    if (t.train.task.mode != mode) throw ConfigError("tasks mix class- and domain-incremental modes");

  SequenceResult result;
  std::set<int> seen;
  std::vector<std::vector<int>> groups;
  std::optional<DetectorState> state;
  TeacherSnapshot previous;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto& task = tasks[t];
    seen.insert(task.train.task.class_ids.begin(), task.train.task.class_ids.end());
    groups.push_back(task.train.task.class_ids);
    const int needed = seen.empty() ? 0 : *seen.rbegin();
    if (!state) {
      state = build_detector(opt.arch, needed, mix_seed(opt.seed, 0));
    } else if (needed > state->class_count) {
      *state = expand_head(*state, needed);
    }

    TrainConfig cfg = task.config;
    if (t == 0 && cfg.mode == TrainMode::kDistill) cfg.mode = TrainMode::kFinetune;
    const TeacherSnapshot teacher = cfg.mode == TrainMode::kDistill ? previous : nullptr;
    if (cfg.mode == TrainMode::kDistill && !teacher) throw ConfigError("distill task has no predecessor");

    // Evaluation data for everything learned so far.
    Dataset eval_set = mode == IncrementMode::kClass ? restrict_classes(test_set, seen) : test_set;
    if (mode == IncrementMode::kDomain) {
      std::set<std::string> domains;
      for (std::size_t j = 0; j <= t; ++j) domains.insert(tasks[j].train.task.domain_tag);
      eval_set.images.clear();
      eval_set.annotations.clear();
      for (const auto& d : domains) {
        const auto part = restrict_domain(test_set, d);
        eval_set.images.insert(eval_set.images.end(), part.images.begin(), part.images.end());
        eval_set.annotations.insert(eval_set.annotations.end(), part.annotations.begin(), part.annotations.end());
      }
    }
    const auto report_for = [&](const DetectorState& s) {
      if (mode == IncrementMode::kClass) return evaluate_model(s, eval_set, store, opt.protocol, groups, opt.inference);
      EvalReport r = evaluate_model(s, eval_set, store, opt.protocol, {}, opt.inference);
      r.per_task_map.clear();
      double sum = 0.0;
      for (std::size_t j = 0; j <= t; ++j) {
        const auto part = restrict_domain(test_set, tasks[j].train.task.domain_tag);
        const double m = evaluate_model(s, part, store, opt.protocol, {}, opt.inference).overall_map;
        r.per_task_map[static_cast<int>(j)] = m;
        sum += m;
      }
      r.task_average = sum / static_cast<double>(t + 1);
      return r;
    };
    const EvalHook hook = [&](int iteration, const DetectorState& s) {
      (void)iteration;
      return report_for(s);
    };

    auto trained = train_task(std::move(*state), teacher, task.train, cfg, store,
                              cfg.eval_every > 0 ? hook : EvalHook{});
    state = std::move(trained.state);
    TaskOutcome outcome;
    outcome.report = trained.ledger.evals().empty() ? report_for(*state) : trained.ledger.evals().back().second;
    outcome.report.eval_set_id = "test/after-task-" + std::to_string(t + 1);
    if (!opt.output_dir.empty()) {
      const auto dir = opt.output_dir / ("task" + std::to_string(t + 1));
      std::filesystem::create_directories(dir);
      outcome.checkpoint = save_checkpoint(*state, dir / "model");
      trained.ledger.add_checkpoint(outcome.checkpoint.filename().string());
      trained.ledger.write_csv(dir / "ledger.csv");
      write_json(trained.ledger.summary(), dir / "ledger.json");
      write_json(to_json(outcome.report), dir / "eval.json");
    }
    outcome.ledger = std::move(trained.ledger);
    std::vector<double> row;
    for (std::size_t j = 0; j <= t; ++j) {
      const auto it = outcome.report.per_task_map.find(static_cast<int>(j));
      row.push_back(it == outcome.report.per_task_map.end() ? 0.0 : it->second);
    }
    result.map_matrix.push_back(std::move(row));
    result.outcomes.push_back(std::move(outcome));
    previous = snapshot_teacher(*state);
  }
  result.forgetting = forgetting(result.map_matrix);
  result.final_state = std::move(*state);
  if (!opt.output_dir.empty()) write_json(to_json(result), opt.output_dir / "sequence.json");
  return result;
}

nlohmann::json to_json(const SequenceResult& r) {
  nlohmann::json reports = nlohmann::json::array();
  for (const auto& o : r.outcomes) reports.push_back(to_json(o.report));
  return {{"map_matrix", r.map_matrix}, {"forgetting", r.forgetting}, {"reports", reports}};
}

}  // namespace codkit
