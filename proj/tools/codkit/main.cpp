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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "codkit/analysis.hpp"
#include "codkit/config.hpp"
#include "codkit/error.hpp"
#include "codkit/eval.hpp"
#include "codkit/trainer.hpp"
#include "codkit/version.hpp"

namespace fs = std::filesystem;
using namespace codkit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFault = 1;
constexpr int kExitUsage = 2;
constexpr const char* kOutputRootEnv = "CODKIT_OUTPUT_ROOT";

// Relative output paths land under $CODKIT_OUTPUT_ROOT when it is set.
fs::path output_path(const fs::path& p) {
  const char* root = std::getenv(kOutputRootEnv);
  if (root && *root && p.is_relative()) return fs::path(root) / p;
  return p;
}

// Records every file a command writes, with the config hash and version.
class OutputLog {
 public:
  OutputLog(fs::path dir, std::string config_hash) : dir_(std::move(dir)), hash_(std::move(config_hash)) {}
  const fs::path& dir() const { return dir_; }
  fs::path add(const std::string& name) {
    files_.push_back(name);
    return dir_ / name;
  }
  void write(const std::string& command) const {
    nlohmann::json files = nlohmann::json::array();
    for (const auto& f : files_) {
      files.push_back({{"path", f}, {"config_hash", hash_}, {"toolkit_version", kVersion}});
    }
    write_json({{"command", command}, {"config_hash", hash_}, {"toolkit_version", kVersion}, {"files", files}},
               dir_ / "outputs.json");
  }

 private:
  fs::path dir_;
  std::string hash_;
  std::vector<std::string> files_;
};

// Pulls "--section.key value" pairs out of argv.
ConfigMap extract_overrides(std::vector<std::string>& args) {
  ConfigMap overrides;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) == 0 && a.find('.') != std::string::npos && a.find('.') > 2) {
      std::string key = a.substr(2), value;
      const auto eq = key.find('=');
      if (eq != std::string::npos) {
        value = key.substr(eq + 1);
        key = key.substr(0, eq);
      } else {
        if (i + 1 >= args.size()) throw ConfigError("override " + a + " needs a value");
        value = args[++i];
      }
      overrides.set(key, value);
    } else {
      rest.push_back(a);
    }
  }
  args = std::move(rest);
  return overrides;
}

struct CommonOptions {
  std::string config;
  std::string preset;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "INI run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--preset", o.preset, "named configuration preset");
}

ConfigMap load_config(const CommonOptions& o, ConfigMap overrides) {
  if (!o.preset.empty()) overrides.set("run.preset", o.preset);
  std::optional<fs::path> file;
  if (!o.config.empty()) file = o.config;
  return resolve_config(file, overrides);
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IngestionError(p.string(), "cannot open");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(p.string(), e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p);
  if (!os) throw Error("cannot write " + p.string());
  os << text;
}

struct BenchmarkFiles {
  std::vector<TaskView> tasks;
  Dataset test;
  std::optional<Dataset> train;
  ClassGroups groups;
};

BenchmarkFiles read_benchmark(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw IngestionError(manifest_path.string(), "benchmark manifest not found");
  const auto m = read_json(manifest_path);
  BenchmarkFiles b;
  try {
    for (const auto& t : m.at("tasks")) {
      b.tasks.push_back(read_task_view(dir / t.at("file").get<std::string>()));
      b.groups.push_back(b.tasks.back().task.class_ids);
    }
    b.test = read_dataset(dir / m.at("test").get<std::string>());
    if (m.contains("train")) b.train = read_dataset(dir / m.at("train").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(manifest_path.string(), e.what());
  }
  return b;
}

DetectorState checkpoint_or_fail(const std::string& path) {
  if (path.empty()) throw ConfigError("--checkpoint is required");
  if (!fs::exists(path)) throw IngestionError(path, "checkpoint not found");
  return load_checkpoint(path);
}

// ---------------------------------------------------------------- commands

struct MakeBenchmarkArgs {
  CommonOptions common;
  std::string out;
  bool force = false;
};

int cmd_make_benchmark(const MakeBenchmarkArgs& a, const ConfigMap& overrides) {
  const auto cfg = load_config(a.common, overrides);
  const fs::path dir = output_path(a.out.empty() ? fs::path(cfg.get("run.output_dir", "runs/default")) / "benchmark"
                                                 : fs::path(a.out));
  if (fs::exists(dir / "manifest.json") && !a.force) {
    throw ConfigError("refusing to overwrite the benchmark in " + dir.string() + " (pass --force)");
  }
  const auto bench = build_benchmark(cfg);
  fs::create_directories(dir);
  OutputLog log(dir, cfg.hash());
  nlohmann::json tasks = nlohmann::json::array();
  Dataset train;
  for (const auto& t : bench.tasks) {
    const std::string name = "task" + std::to_string(t.task.task_index) + ".json";
    write_task_view(t, log.add(name));
    tasks.push_back({{"file", name},
                     {"index", t.task.task_index},
                     {"class_ids", t.task.class_ids},
                     {"domain", t.task.domain_tag},
                     {"images", t.data.images.size()},
                     {"annotations", t.data.annotations.size()}});
  }
  write_dataset(bench.test, log.add("test.json"));
  write_text(log.add("config.ini"), cfg.to_ini());
  log.add("manifest.json");
  write_json({{"tasks", tasks},
              {"test", "test.json"},
              {"mode", cfg.get("benchmark.mode", "class")},
              {"config_hash", cfg.hash()},
              {"toolkit_version", kVersion}},
             dir / "manifest.json");
  log.write("make-benchmark");
  std::cout << "wrote " << bench.tasks.size() << " tasks to " << dir.string() << '\n';
  return kExitOk;
}

struct TrainArgs {
  CommonOptions common;
  std::string benchmark;
  std::string out;
  std::string mode;
};

int cmd_train(const TrainArgs& a, ConfigMap overrides) {
  auto cfg = load_config(a.common, overrides);
  const fs::path run_dir = output_path(a.out.empty() ? fs::path(cfg.get("run.output_dir", "runs/default"))
                                                     : fs::path(a.out));
  const fs::path bench_dir = a.benchmark.empty() ? run_dir / "benchmark" : fs::path(a.benchmark);
  const auto bench = read_benchmark(bench_dir);
  if (!a.mode.empty()) {
    train_mode_from_string(a.mode);
    for (std::size_t t = 1; t <= bench.tasks.size(); ++t) cfg.set("task" + std::to_string(t) + ".mode", a.mode);
  }
  std::vector<SequenceTask> tasks;
  for (const auto& t : bench.tasks) tasks.push_back({t, trainer_config(cfg, t.task.task_index)});
  SequenceOptions opt;
  opt.arch = arch_config(cfg);
  opt.seed = run_seed(cfg);
  opt.protocol = protocol_from_string(cfg.get("run.protocol", "voc50"));
  opt.output_dir = run_dir;
  fs::create_directories(run_dir);
  OutputLog log(run_dir, cfg.hash());
  write_text(log.add("config.ini"), cfg.to_ini());
  ImageStore store;
  try {
    const auto result = run_sequence(tasks, bench.test, store, opt);
    for (std::size_t t = 1; t <= tasks.size(); ++t) {
      const std::string d = "task" + std::to_string(t) + "/";
      for (const char* f : {"model.json", "model.bin", "ledger.csv", "ledger.json", "eval.json"}) log.add(d + f);
    }
    log.add("sequence.json");
    log.write("train");
    const auto& last = result.outcomes.back().report;
    std::cout << "final mAP " << last.overall_map << " (task average " << last.task_average << ")\n";
  } catch (const TrainingFault& e) {
    std::string text = std::string(e.what()) + "\n";
    for (const auto& row : e.recent_rows()) text += row + "\n";
    write_text(log.add("fault.log"), text);
    log.write("train");
    throw;
  }
  return kExitOk;
}

struct EvaluateArgs {
  std::string checkpoint;
  std::string dataset;
  std::string detections;
  std::string protocol = "voc50";
  std::string interpolation = "all-points";
  std::string out;
};

int cmd_evaluate(const EvaluateArgs& a) {
  if (a.dataset.empty()) throw ConfigError("--dataset is required");
  if (!fs::exists(a.dataset)) throw IngestionError(a.dataset, "dataset not found");
  const auto protocol = protocol_from_string(a.protocol);
  const auto interp = interpolation_from_string(a.interpolation);
  const Dataset ds = read_dataset(a.dataset);
  std::vector<Detection> dets;
  fs::path dir;
  if (!a.detections.empty()) {
    dets = read_detections(a.detections);
    dir = a.out.empty() ? fs::path(a.detections).parent_path() / "eval" : fs::path(a.out);
  } else {
    const auto state = checkpoint_or_fail(a.checkpoint);
    ImageStore store;
    for (const auto& rec : ds.images) {
      const auto found = infer(state, *store.load(rec), rec.image_id);
      dets.insert(dets.end(), found.begin(), found.end());
    }
    dir = a.out.empty() ? fs::path(a.checkpoint).parent_path() / "eval" : fs::path(a.out);
  }
  dir = output_path(dir);
  const auto report = evaluate(dets, ds, protocol, {}, interp, fs::path(a.dataset).filename().string());
  fs::create_directories(dir);
  OutputLog log(dir, "");
  write_json(to_json(report), log.add("eval.json"));
  if (a.detections.empty()) write_detections(dets, log.add("detections.json"));
  write_per_class_csv({{fs::path(a.checkpoint.empty() ? a.detections : a.checkpoint).stem().string(), report}},
                      log.add("per_class.csv"));
  {
    std::ofstream os(log.add("summary.csv"));
    const auto mean = [](const std::map<int, double>& m) {
      double s = 0.0;
      for (const auto& [k, v] : m) s += v;
      return m.empty() ? 0.0 : s / static_cast<double>(m.size());
    };
    if (protocol == IouProtocol::kCoco) {
      os << "AP,AP50,AP75\n"
         << 100.0 * report.overall_map << ',' << 100.0 * mean(report.per_class_ap50) << ','
         << 100.0 * mean(report.per_class_ap75) << '\n';
    } else {
      os << "mAP\n" << 100.0 * report.overall_map << '\n';
    }
  }
  log.write("evaluate");
  std::cout << "mAP " << report.overall_map << '\n';
  return kExitOk;
}

struct AnalyzeArgs {
  std::string which;
  std::string checkpoint;
  std::string benchmark;
  std::string dataset;
  std::string detections;
  std::string task;
  std::string out = "analysis";
  bool per_instance = false;
  double l = 10.0;
  double delta = 1.0;
  int extra = 0;
  int points = 101;
};

std::vector<std::string> labels_of(const Dataset& ds) { return ds.class_names; }

int cmd_analyze(const AnalyzeArgs& a) {
  const fs::path dir = output_path(a.out);
  fs::create_directories(dir);
  OutputLog log(dir, "");
  const auto dataset_or_test = [&]() -> Dataset {
    if (!a.dataset.empty()) return read_dataset(a.dataset);
    if (!a.benchmark.empty()) return read_benchmark(a.benchmark).test;
    throw ConfigError("--dataset or --benchmark is required");
  };
  const auto groups_or_all = [&](const Dataset& ds) -> ClassGroups {
    if (!a.benchmark.empty()) return read_benchmark(a.benchmark).groups;
    ClassGroups g(1);
    for (int c = 1; c <= ds.class_count(); ++c) g[0].push_back(c);
    return g;
  };
  const auto check_classes = [](const DetectorState& s, const Dataset& ds) {
    if (s.class_count > ds.class_count()) {
      throw ConfigError("checkpoint predicts " + std::to_string(s.class_count) + " classes but the dataset has " +
                        std::to_string(ds.class_count()));
    }
  };

  if (a.which == "losses") {
    const auto rows = loss_interpolation_study(a.l, a.delta, a.extra, a.points);
    write_loss_study_csv(rows, a.l, a.delta, log.add("loss_study.csv"));
    std::vector<double> x;
    PlotSeries ce{"CE"}, mse{"MSE"}, hub{"Huber"};
    for (const auto& r : rows) {
      x.push_back(r.l1);
      ce.y.push_back(r.ce);
      mse.y.push_back(r.mse);
      hub.y.push_back(r.huber);
    }
    write_line_plot_svg(x, {ce, mse, hub}, "L1 distance to x_o", "Competing losses, l=" + std::to_string(a.l),
                        log.add("loss_study.svg"));
  } else if (a.which == "cooc") {
    Dataset ds;
    if (!a.dataset.empty()) {
      ds = read_dataset(a.dataset);
    } else if (!a.benchmark.empty()) {
      const auto b = read_benchmark(a.benchmark);
      ds.class_names = b.test.class_names;
      std::set<std::string> seen;
      for (const auto& t : b.tasks) {
        for (const auto& im : t.data.images)
          if (seen.insert(im.image_id).second) ds.images.push_back(im);
        ds.annotations.insert(ds.annotations.end(), t.data.annotations.begin(), t.data.annotations.end());
      }
    } else {
      throw ConfigError("--dataset or --benchmark is required");
    }
    const auto m = cooccurrence(ds, a.per_instance);
    write_json(to_json(m), log.add("cooccurrence.json"));
    write_matrix_csv(m.values, labels_of(ds), log.add("cooccurrence.csv"));
    write_heatmap_svg(m.values, labels_of(ds), "Co-occurrence", log.add("cooccurrence.svg"));
  } else if (a.which == "rpn") {
    const auto state = checkpoint_or_fail(a.checkpoint);
    const auto ds = dataset_or_test();
    check_classes(state, ds);
    ImageStore store;
    const auto r = rpn_recall(state, ds, store, groups_or_all(ds));
    write_json(to_json(r), log.add("rpn_recall.json"));
    std::ofstream os(log.add("rpn_recall.csv"));
    os << "group,gt_count,found,found_fraction,mean_objectness\n";
    for (std::size_t g = 0; g < r.groups.size(); ++g) {
      const auto& s = r.groups[g];
      os << "T" << g + 1 << ',' << s.gt_count << ',' << s.found << ',' << s.found_fraction << ','
         << s.mean_objectness << '\n';
    }
  } else if (a.which == "roi") {
    const auto state = checkpoint_or_fail(a.checkpoint);
    const auto ds = dataset_or_test();
    check_classes(state, ds);
    ImageStore store;
    const auto p = roi_partition(collect_roi_observations(state, ds, store), groups_or_all(ds));
    write_json(to_json(p), log.add("roi_partition.json"));
    std::ofstream os(log.add("roi_partition.csv"));
    os << "group,count,correct,wrong_class,background\n";
    for (std::size_t g = 0; g < p.groups.size(); ++g) {
      const auto& s = p.groups[g];
      os << "T" << g + 1 << ',' << s.count << ',' << s.correct << ',' << s.wrong_class << ',' << s.background
         << '\n';
    }
  } else if (a.which == "confusion") {
    const auto ds = dataset_or_test();
    std::vector<Detection> dets;
    if (!a.detections.empty()) {
      dets = read_detections(a.detections);
    } else {
      const auto state = checkpoint_or_fail(a.checkpoint);
      check_classes(state, ds);
      ImageStore store;
      for (const auto& rec : ds.images) {
        const auto found = infer(state, *store.load(rec), rec.image_id);
        dets.insert(dets.end(), found.begin(), found.end());
      }
    }
    const auto m = confusion_matrix(dets, ds);
    auto j = to_json(m);
    if (!a.benchmark.empty()) {
      const auto groups = read_benchmark(a.benchmark).groups;
      if (groups.size() >= 2) {
        std::vector<int> old;
        for (std::size_t g = 0; g + 1 < groups.size(); ++g) old.insert(old.end(), groups[g].begin(), groups[g].end());
        j["new_as_old_fraction"] = block_fraction(m, groups.back(), old);
      }
    }
    write_json(j, log.add("confusion.json"));
    write_matrix_csv(m.normalized, labels_of(ds), log.add("confusion_normalized.csv"));
    write_matrix_csv(m.absolute, labels_of(ds), log.add("confusion_absolute.csv"));
    write_heatmap_svg(m.normalized, labels_of(ds), "Wrong classifications per ground truth",
                      log.add("confusion.svg"));
  } else if (a.which == "bkg") {
    const auto teacher = checkpoint_or_fail(a.checkpoint);
    if (a.task.empty()) throw ConfigError("--task (the next task's view) is required");
    if (!fs::exists(a.task)) throw IngestionError(a.task, "task view not found");
    const auto next = read_task_view(a.task);
    ImageStore store;
    const auto scores = background_scores(teacher, next, store);
    nlohmann::json j = nlohmann::json::object();
    std::ofstream os(log.add("background_scores.csv"));
    os << "class,median_background_logit\n";
    for (const auto& [c, v] : scores) {
      const std::string name = next.data.class_names.at(c - 1);
      j[name] = v;
      os << name << ',' << v << '\n';
    }
    write_json({{"median_background_logit", j}}, log.add("background_scores.json"));
  } else {
    throw ConfigError("unknown analysis '" + a.which + "' (rpn, roi, confusion, cooc, bkg, losses)");
  }
  log.write("analyze " + a.which);
  std::cout << "wrote " << a.which << " analysis to " << dir.string() << '\n';
  return kExitOk;
}

struct ReportArgs {
  std::vector<std::string> runs;
  std::vector<std::string> labels;
  std::string out = "report";
};

int cmd_report(const ReportArgs& a) {
  if (a.runs.empty()) throw ConfigError("at least one --run is required");
  if (!a.labels.empty() && a.labels.size() != a.runs.size()) throw ConfigError("give one --label per --run");
  const fs::path dir = output_path(a.out);
  fs::create_directories(dir);
  OutputLog log(dir, "");
  std::vector<std::pair<std::string, EvalReport>> finals;
  nlohmann::json rows = nlohmann::json::array();
  std::size_t n_tasks = 0;
  for (std::size_t i = 0; i < a.runs.size(); ++i) {
    const auto seq = read_json(fs::path(a.runs[i]) / "sequence.json");
    const auto report = eval_report_from_json(seq.at("reports").back());
    const std::string label = a.labels.empty() ? fs::path(a.runs[i]).filename().string() : a.labels[i];
    finals.emplace_back(label, report);
    n_tasks = std::max(n_tasks, report.per_task_map.size());
    rows.push_back({{"label", label}, {"run", a.runs[i]}, {"final", to_json(report)},
                    {"forgetting", seq.at("forgetting")}});
  }
  std::ofstream os(log.add("comparison.csv"));
  os << "method";
  for (std::size_t t = 0; t < n_tasks; ++t) os << ",T" << t + 1;
  os << ",task_average,mAP\n" << std::fixed << std::setprecision(1);
  for (const auto& [label, r] : finals) {
    os << label;
    for (std::size_t t = 0; t < n_tasks; ++t) {
      os << ',';
      const auto it = r.per_task_map.find(static_cast<int>(t));
      if (it != r.per_task_map.end()) os << 100.0 * it->second;
    }
    os << ',' << 100.0 * r.task_average << ',' << 100.0 * r.overall_map << '\n';
  }
  write_per_class_csv(finals, log.add("per_class.csv"));
  write_json({{"runs", rows}}, log.add("report.json"));
  log.write("report");
  std::cout << "compared " << finals.size() << " runs in " << dir.string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  ConfigMap overrides;
  try {
    overrides = extract_overrides(args);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  CLI::App app{"Continual object detection toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  MakeBenchmarkArgs mb;
  auto* c_mb = app.add_subcommand("make-benchmark", "Build task files from a dataset source");
  add_common(c_mb, mb.common);
  c_mb->add_option("--out", mb.out, "benchmark directory");
  c_mb->add_flag("--force", mb.force, "overwrite an existing benchmark");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train a task sequence");
  add_common(c_tr, tr.common);
  c_tr->add_option("--benchmark", tr.benchmark, "benchmark directory");
  c_tr->add_option("--out", tr.out, "run directory");
  c_tr->add_option("--mode", tr.mode, "override the mode of every task (joint, finetune, freeze_backbone, distill)");

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Evaluate a checkpoint or a detection file");
  c_ev->add_option("--checkpoint", ev.checkpoint, "checkpoint manifest");
  c_ev->add_option("--dataset", ev.dataset, "dataset or task file")->required();
  c_ev->add_option("--detections", ev.detections, "evaluate stored detections instead of a checkpoint");
  c_ev->add_option("--protocol", ev.protocol, "voc50 or coco");
  c_ev->add_option("--interpolation", ev.interpolation, "all-points or 11-point");
  c_ev->add_option("--out", ev.out, "output directory");

  AnalyzeArgs an;
  auto* c_an = app.add_subcommand("analyze", "Forgetting diagnostics");
  c_an->add_option("which", an.which, "rpn, roi, confusion, cooc, bkg or losses")->required();
  c_an->add_option("--checkpoint", an.checkpoint, "checkpoint manifest");
  c_an->add_option("--benchmark", an.benchmark, "benchmark directory (task grouping, test set)");
  c_an->add_option("--dataset", an.dataset, "dataset file");
  c_an->add_option("--detections", an.detections, "detection file (confusion)");
  c_an->add_option("--task", an.task, "next-task view (bkg)");
  c_an->add_option("--out", an.out, "output directory");
  c_an->add_flag("--per-instance", an.per_instance, "co-occurrence per row instance instead of per image");
  c_an->add_option("--l", an.l, "teacher logit (losses)");
  c_an->add_option("--delta", an.delta, "Huber delta (losses)");
  c_an->add_option("--extra", an.extra, "additional zero logits (losses)");
  c_an->add_option("--points", an.points, "interpolation points (losses)");

  ReportArgs rp;
  auto* c_rp = app.add_subcommand("report", "Compare finished runs");
  c_rp->add_option("--run", rp.runs, "run directory (repeatable)")->required();
  c_rp->add_option("--label", rp.labels, "row label per run");
  c_rp->add_option("--out", rp.out, "output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*c_mb) return cmd_make_benchmark(mb, overrides);
    if (*c_tr) return cmd_train(tr, overrides);
    if (!overrides.values().empty()) throw ConfigError("config overrides only apply to make-benchmark and train");
    if (*c_ev) return cmd_evaluate(ev);
    if (*c_an) return cmd_analyze(an);
    if (*c_rp) return cmd_report(rp);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IngestionError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const TrainingFault& e) {
    std::cerr << "training fault: " << e.what() << '\n';
    for (const auto& row : e.recent_rows()) std::cerr << "  " << row << '\n';
    return kExitFault;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFault;
  }
  return kExitUsage;
}
