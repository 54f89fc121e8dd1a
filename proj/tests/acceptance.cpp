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

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "codkit/analysis.hpp"
#include "codkit/config.hpp"
#include "codkit/distill.hpp"
#include "codkit/eval.hpp"
#include "codkit/geometry.hpp"
#include "codkit/trainer.hpp"
#include "oracles.hpp"

using namespace codkit;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------- tolerances

constexpr double kIouTol = 1e-6;
constexpr double kGeometrySeconds = 10.0;
constexpr double kHuberTol = 1e-12;
constexpr double kGradRelTol = 1e-3;
constexpr double kDistillTol = 1e-6;
constexpr double kDistillSeconds = 30.0;
constexpr double kChiSquaredP = 0.01;
constexpr double kCocoTol = 1e-12;
constexpr double kForgettingPoints = 25.0;
constexpr double kRecoveredShare = 0.5;
constexpr double kOldSlackPoints = 5.0;
constexpr int kSeedsRequired = 2;
constexpr double kPartitionTol = 1e-9;
constexpr double kJointMap = 0.8;
constexpr double kRpnFound = 0.95;
constexpr double kRpnSymmetry = 0.03;
const std::vector<std::uint64_t> kSeeds{1, 2, 3};

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Checker {
 public:
  void require(bool ok, const std::string& what) {
    if (!ok && out_.pass) {
      out_.pass = false;
      first_failure_ = what;
    }
  }
  void note(const std::string& s) { notes_ += (notes_.empty() ? "" : "; ") + s; }
  Outcome done() {
    out_.detail = out_.pass ? notes_ : first_failure_ + (notes_.empty() ? "" : " | " + notes_);
    return out_;
  }

 private:
  Outcome out_;
  std::string first_failure_, notes_;
};

std::string fmt(double v, int digits = 3) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2e", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const fs::path& work_dir() {
  static const fs::path dir = [] {
    const auto d = fs::temp_directory_path() / "codkit_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// ---------------------------------------------------------------- 1 geometry

Outcome geometry() {
  Checker c;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const Box a = oracle::grid_box(rng), b = oracle::grid_box(rng);
    worst = std::max(worst, std::abs(iou(a, b) - oracle::raster_iou(a, b)));
  }
  c.require(worst <= kIouTol, "iou deviates from the raster oracle by " + sci(worst));
  int mismatches = 0, instances = 0;
  while (instances < 1000) {
    const int n = rng.between(1, 10);
    std::vector<ScoredBox> boxes;
    std::vector<Box> raw;
    std::vector<double> scores;
    for (int i = 0; i < n; ++i) {
      raw.push_back(oracle::grid_box(rng));
      scores.push_back(rng.between(0, 6) / 6.0);
      boxes.push_back({raw.back(), scores.back()});
    }
    const double thr = rng.uniform(0.1, 0.9);
    bool unique = false;
    const auto expect = oracle::nms_exhaustive(raw, scores, thr, &unique);
    if (!unique) continue;
    ++instances;
    const auto kept = nms(boxes, thr);
    mismatches += std::set<std::size_t>(kept.begin(), kept.end()) != expect;
  }
  c.require(mismatches == 0, std::to_string(mismatches) + " NMS instances differ from the exhaustive oracle");
  const double secs = seconds_since(t0);
  c.require(secs < kGeometrySeconds, "took " + fmt(secs, 1) + " s");
  c.note("max IOU error " + sci(worst) + ", 1000 NMS instances, " + fmt(secs, 2) + " s");
  return c.done();
}

// ---------------------------------------------------------------- 2 huber

Outcome huber_checks() {
  Checker c;
  Rng rng(202);
  double worst = 0, worst_grad = 0;
  bool bounded = true, below_mse = true;
  for (int i = 0; i < 10000; ++i) {
    const double delta = rng.uniform(0.1, 4.0);
    // Differences concentrated around the branch switch, both signs.
    const double mag = delta * rng.uniform(0.5, 1.5);
    const double d = rng.bernoulli(0.5) ? mag : -mag;
    const double y = rng.uniform(-5, 5), x = y + d;
    const double diff = x - y;
    const double formula =
        std::abs(diff) <= delta ? 0.5 * diff * diff : delta * (std::abs(diff) - 0.5 * delta);
    const double h = huber(x, y, delta);
    worst = std::max(worst, std::abs(h - formula));
    below_mse = below_mse && h <= 0.5 * diff * diff + kHuberTol;
    const double g = huber_grad(x, y, delta);
    bounded = bounded && std::abs(g) <= delta + kHuberTol;
    const double step = 1e-6;
    const double fd = (huber(x + step, y, delta) - huber(x - step, y, delta)) / (2 * step);
    worst_grad = std::max(worst_grad, std::abs(fd - g) / std::max(std::abs(fd), 1e-3));
  }
  c.require(worst <= kHuberTol, "huber deviates from the two-branch formula by " + sci(worst));
  c.require(below_mse, "huber exceeds half the squared error");
  c.require(bounded, "gradient exceeds delta");
  c.require(worst_grad < kGradRelTol, "finite-difference relative error " + sci(worst_grad));
  c.note("max formula error " + sci(worst) + ", max gradient rel. error " + sci(worst_grad));
  return c.done();
}

// ---------------------------------------------------------------- 3 distillation losses

Outcome distill_losses() {
  Checker c;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(303);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const int ch = rng.between(1, 6), h = rng.between(1, 6), w = rng.between(1, 6);
    Tensor a({ch, h, w}), b({ch, h, w});
    for (auto& v : a.data) v = static_cast<Real>(rng.normal());
    for (auto& v : b.data) v = static_cast<Real>(rng.normal());
    const double want = oracle::naive_mse(b.data, a.data);
    worst = std::max(worst, std::abs(feature_distill_loss(a, b) - want) / std::max(1.0, want));

    RpnOutputs rt;
    rt.feat_h = h, rt.feat_w = w, rt.per_cell = rng.between(1, 3);
    rt.objectness.resize(static_cast<std::size_t>(h * w * rt.per_cell));
    rt.deltas.resize(rt.objectness.size() * 4);
    for (auto& v : rt.objectness) v = static_cast<Real>(rng.normal());
    for (auto& v : rt.deltas) v = static_cast<Real>(rng.normal());
    RpnOutputs rs = rt;
    for (auto& v : rs.objectness) v = static_cast<Real>(rng.normal());
    for (auto& v : rs.deltas) v = static_cast<Real>(rng.normal());
    const double rpn_want = oracle::naive_mse(rs.objectness, rt.objectness) + oracle::naive_mse(rs.deltas, rt.deltas);
    worst = std::max(worst, std::abs(rpn_distill_loss(rt, rs) - rpn_want) / std::max(1.0, rpn_want));

    const int rows = rng.between(1, 8), old_c = rng.between(1, 3), new_c = old_c + rng.between(0, 3);
    RoiOutputs to, so;
    to.rows = so.rows = rows;
    to.class_count = old_c;
    so.class_count = new_c;
    to.logits.resize(static_cast<std::size_t>(rows * (old_c + 1)));
    to.deltas.resize(static_cast<std::size_t>(rows * 4 * old_c));
    so.logits.resize(static_cast<std::size_t>(rows * (new_c + 1)));
    so.deltas.resize(static_cast<std::size_t>(rows * 4 * new_c));
    for (auto* vec : {&to.logits, &to.deltas, &so.logits, &so.deltas})
      for (auto& v : *vec) v = static_cast<Real>(rng.normal() * 3);
    for (const auto loss_kind : {RoiLossKind::kMse, RoiLossKind::kHuber})
      for (const bool deltas : {true, false}) {
        DistillConfig cfg;
        cfg.roi_loss_kind = loss_kind;
        cfg.huber_delta = rng.uniform(0.5, 2.0);
        cfg.distill_roi_deltas = deltas;
        double sl = 0, sd = 0;
        std::size_t nl = 0, nd = 0;
        const auto pen = [&](double d) {
          return loss_kind == RoiLossKind::kMse ? d * d : oracle::naive_huber(d, cfg.huber_delta);
        };
        for (int r = 0; r < rows; ++r) {
          for (int k = 0; k <= old_c; ++k, ++nl)
            sl += pen(double(so.logits[r * (new_c + 1) + k]) - double(to.logits[r * (old_c + 1) + k]));
          for (int k = 0; k < 4 * old_c; ++k, ++nd)
            sd += pen(double(so.deltas[r * 4 * new_c + k]) - double(to.deltas[r * 4 * old_c + k]));
        }
        const double roi_want = sl / nl + (deltas ? sd / nd : 0.0);
        worst = std::max(worst, std::abs(roi_distill_loss(to, so, cfg) - roi_want) / std::max(1.0, roi_want));
      }
  }
  c.require(worst <= kDistillTol, "loss deviates from the scalar oracle by " + sci(worst));

  int nonzero = 0, configs = 0;
  ShapesConfig sc;
  sc.seed = 33;
  sc.n_images = 3;
  sc.classes.assign(default_archetypes().begin(), default_archetypes().begin() + 4);
  const auto scenes = generate_shapes(sc);
  const auto model = build_detector(arch_preset("toy"), 4, 9);
  for (const auto& rec : scenes.images) {
    const Image img = render_synthetic(rec.source, rec.width, rec.height);
    std::vector<Annotation> gts;
    for (const auto& a : scenes.annotations)
      if (a.image_id == rec.image_id) gts.push_back(a);
    for (int mask = 0; mask < 8; ++mask)
      for (const bool selective : {false, true})
        for (const auto loss_kind : {RoiLossKind::kMse, RoiLossKind::kHuber})
          for (const bool deltas : {true, false}) {
            DistillConfig cfg;
            cfg.enable_feature = mask & 1;
            cfg.enable_rpn = mask & 2;
            cfg.enable_roi = mask & 4;
            cfg.selective = selective;
            cfg.roi_loss_kind = loss_kind;
            cfg.distill_roi_deltas = deltas;
            Rng r(static_cast<std::uint64_t>(mask));
            ++configs;
            nonzero += total_distill_loss(model, model, img, gts, cfg, r).total() != 0.0;
          }
  }
  c.require(nonzero == 0, std::to_string(nonzero) + " configs give a non-zero loss against an identical teacher");
  const double secs = seconds_since(t0);
  c.require(secs < kDistillSeconds, "took " + fmt(secs, 1) + " s");
  c.note("max rel. error " + sci(worst) + ", " + std::to_string(configs) + " identical-teacher configs, " +
         fmt(secs, 2) + " s");
  return c.done();
}

// ---------------------------------------------------------------- 4 selective distillation

Outcome selective() {
  Checker c;
  Rng rng(404);
  const DistillConfig sel = DistillConfig::selective_huber();
  int overlapping = 0, wrong_set = 0, exact_sets = 0;
  for (int t = 0; t < 1000; ++t) {
    const int n = rng.between(1, 200);
    std::vector<Proposal> props;
    for (int i = 0; i < n; ++i) {
      const double x = rng.uniform(0, 48), y = rng.uniform(0, 48);
      props.push_back({{x, y, x + rng.uniform(2, 16), y + rng.uniform(2, 16)}, 10.0 - 0.01 * i});
    }
    std::vector<Annotation> gts;
    for (int k = rng.between(0, 8); k > 0; --k) {
      Box b = props[rng.below(props.size())].box;
      b.x_max += rng.uniform(0, 3);
      gts.push_back({"x", 1, b, false});
    }
    std::vector<Box> admissible;
    for (std::size_t i = 0; i < std::min<std::size_t>(props.size(), sel.pool_size); ++i) {
      bool ok = true;
      for (const auto& g : gts) ok = ok && oracle::plain_iou(props[i].box, g.box) <= sel.selective_iou_threshold;
      if (ok) admissible.push_back(props[i].box);
    }
    const auto rois = select_distill_rois(props, gts, sel, rng);
    for (const auto& b : rois)
      for (const auto& g : gts) overlapping += oracle::plain_iou(b, g.box) > sel.selective_iou_threshold;
    bool subset = rois.size() == std::min<std::size_t>(admissible.size(), sel.sample_size);
    for (const auto& b : rois) subset = subset && std::find(admissible.begin(), admissible.end(), b) != admissible.end();
    if (admissible.size() <= static_cast<std::size_t>(sel.sample_size)) {
      ++exact_sets;
      subset = subset && rois == admissible;
    }
    wrong_set += !subset;
  }
  c.require(overlapping == 0, std::to_string(overlapping) + " selected rois overlap a ground truth above 0.5");
  c.require(wrong_set == 0, std::to_string(wrong_set) + " instances differ from the exhaustive filter");

  const DistillConfig plain;
  int bad_plain = 0;
  for (int t = 0; t < 200; ++t) {
    const int n = rng.between(128, 300);
    std::vector<Proposal> props;
    for (int i = 0; i < n; ++i) {
      const double x = rng.uniform(0, 48), y = rng.uniform(0, 48);
      props.push_back({{x, y, x + rng.uniform(2, 16), y + rng.uniform(2, 16)}, 10.0 - 0.01 * i});
    }
    const auto rois = select_distill_rois(props, {}, plain, rng);
    std::set<std::size_t> ranks;
    for (const auto& b : rois)
      for (std::size_t r = 0; r < props.size(); ++r)
        if (props[r].box == b) ranks.insert(r);
    bad_plain += !(rois.size() == 64 && ranks.size() == 64 && *ranks.rbegin() < 128);
  }
  c.require(bad_plain == 0, std::to_string(bad_plain) + " unfiltered selections are not 64 of the top 128");

  // Six admissible proposals out of a pool of seven, three drawn.
  std::vector<Proposal> props;
  for (int i = 0; i < 8; ++i) props.push_back({{i * 8.0, 0, i * 8.0 + 6, 6}, 10.0 - i});
  const std::vector<Annotation> gts{{"x", 1, props[4].box, false}};
  DistillConfig small;
  small.selective = true;
  small.pool_size = 7;
  small.sample_size = 3;
  std::map<std::set<int>, int> counts;
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    std::set<int> s;
    for (const auto& b : select_distill_rois(props, gts, small, rng)) s.insert(static_cast<int>(b.x_min / 8));
    ++counts[s];
  }
  double chi2 = 0;
  const double expected = draws / 20.0;
  for (const auto& [s, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
  chi2 += (20 - static_cast<int>(counts.size())) * expected;
  const double p = 1.0 - boost::math::cdf(boost::math::chi_squared(19), chi2);
  c.require(counts.size() == 20, std::to_string(counts.size()) + " distinct subsets drawn instead of 20");
  c.require(p > kChiSquaredP, "uniformity p = " + fmt(p, 4));
  c.note("1000 filtered instances (" + std::to_string(exact_sets) + " set-exact), 200 unfiltered, chi2 p = " +
         fmt(p, 3));
  return c.done();
}

// ---------------------------------------------------------------- 5 evaluation

struct EvalInstance {
  Dataset ds;
  std::vector<Detection> dets;
};

EvalInstance random_eval_instance(Rng& rng) {
  EvalInstance in;
  in.ds.class_names = {"c1", "c2"};
  in.ds.images = {{"a", 64, 64, "", ""}, {"b", 64, 64, "", ""}};
  for (int g = rng.between(1, 5); g > 0; --g)
    in.ds.annotations.push_back(
        {rng.bernoulli(0.5) ? "a" : "b", rng.between(1, 2), oracle::grid_box(rng), rng.bernoulli(0.15)});
  for (int d = rng.between(0, 10); d > 0; --d) {
    const auto& g = in.ds.annotations[rng.below(in.ds.annotations.size())];
    Box b = rng.bernoulli(0.7) ? g.box : oracle::grid_box(rng);
    b.x_max += rng.between(0, 3) * 0.25;
    in.dets.push_back({rng.bernoulli(0.8) ? g.image_id : "a", rng.between(1, 2), rng.between(1, 8) / 8.0, b});
  }
  return in;
}

Outcome evaluation() {
  Checker c;
  Rng rng(505);
  int ap_mismatch = 0, imperfect = 0, coco_mismatch = 0, perfect_runs = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto in = random_eval_instance(rng);
    for (const int cls : {1, 2}) {
      const auto got = average_precision(in.dets, in.ds.annotations, cls, 0.5);
      const auto want = oracle::brute_ap(in.dets, in.ds.annotations, cls, 0.5);
      ap_mismatch += got.has_value() != want.has_value() || (got && *got != *want);
    }
    const auto coco = evaluate(in.dets, in.ds, IouProtocol::kCoco);
    for (const auto& [cls, ap] : coco.per_class_ap) {
      double sum = 0;
      for (const double thr : coco_iou_thresholds())
        sum += *average_precision(in.dets, in.ds.annotations, cls, thr, ApInterpolation::kAllPoints, 100);
      coco_mismatch += std::abs(ap - sum / 10.0) > kCocoTol;
    }
    const bool any_scored =
        std::any_of(in.ds.annotations.begin(), in.ds.annotations.end(), [](const Annotation& a) { return !a.difficult; });
    if (any_scored) {
      std::vector<Detection> perfect;
      for (const auto& a : in.ds.annotations) perfect.push_back({a.image_id, a.class_id, 1.0, a.box});
      ++perfect_runs;
      imperfect += evaluate(perfect, in.ds, IouProtocol::kVoc50).overall_map != 1.0;
      imperfect += evaluate(perfect, in.ds, IouProtocol::kCoco).overall_map != 1.0;
    }
  }
  c.require(ap_mismatch == 0, std::to_string(ap_mismatch) + " AP values differ from PR enumeration");
  c.require(imperfect == 0, std::to_string(imperfect) + " perfect detection sets score below 1.0");
  c.require(coco_mismatch == 0, std::to_string(coco_mismatch) + " COCO APs differ from the threshold mean");
  c.note("1000 instances exact, " + std::to_string(perfect_runs) + " perfect replays");
  return c.done();
}

// ---------------------------------------------------------------- 6 desk experiment

struct SeedRun {
  double joint_old = 0, joint_all = 0;
  double ft_old = 0, ft_new = 0;
  double mse_old = 0, mse_new = 0;
  double ours_old = 0, ours_new = 0;
  RpnRecallReport ours_rpn;
  std::map<int, double> background;  // next-task class -> median teacher background logit
};

const std::vector<int> kOld{1, 2, 3}, kNew{4, 5, 6};

SequenceResult run_preset(const std::string& preset, std::uint64_t seed, BenchmarkData* bench_out = nullptr) {
  ConfigMap over;
  over.set("run.preset", preset);
  over.set("run.seed", std::to_string(seed));
  const auto cfg = resolve_config(std::nullopt, over);
  auto bench = build_benchmark(cfg);
  std::vector<SequenceTask> tasks;
  for (const auto& t : bench.tasks) tasks.push_back({t, trainer_config(cfg, t.task.task_index)});
  SequenceOptions opt;
  opt.arch = arch_config(cfg);
  opt.seed = run_seed(cfg);
  opt.output_dir = work_dir() / ("desk_" + preset + "_s" + std::to_string(seed));
  ImageStore store;
  const auto t0 = std::chrono::steady_clock::now();
  auto result = run_sequence(tasks, bench.test, store, opt);
  std::cerr << "  " << preset << " seed " << seed << ": " << fmt(seconds_since(t0), 0) << " s\n";
  if (bench_out) *bench_out = std::move(bench);
  return result;
}

std::vector<SeedRun>& desk_runs() {
  static std::vector<SeedRun> runs = [] {
    std::vector<SeedRun> out;
    for (const auto seed : kSeeds) {
      SeedRun r;
      const auto joint = run_preset("desk-joint", seed).outcomes.back().report;
      r.joint_old = *joint.mean_over(kOld);
      r.joint_all = joint.overall_map;
      BenchmarkData bench;
      const auto ft = run_preset("desk-finetune", seed, &bench);
      r.ft_old = *ft.outcomes.back().report.mean_over(kOld);
      r.ft_new = *ft.outcomes.back().report.mean_over(kNew);
      const auto mse = run_preset("desk-filod", seed).outcomes.back().report;
      r.mse_old = *mse.mean_over(kOld);
      r.mse_new = *mse.mean_over(kNew);
      const auto ours = run_preset("desk-ours", seed);
      r.ours_old = *ours.outcomes.back().report.mean_over(kOld);
      r.ours_new = *ours.outcomes.back().report.mean_over(kNew);
      ImageStore store;
      r.ours_rpn = rpn_recall(ours.final_state, bench.test, store, {kOld, kNew});
      const auto teacher = load_checkpoint(ft.outcomes.front().checkpoint);
      r.background = background_scores(teacher, bench.tasks[1], store);
      std::cerr << "  seed " << seed << ": joint old " << fmt(r.joint_old) << ", finetune " << fmt(r.ft_old) << "/"
                << fmt(r.ft_new) << ", mse " << fmt(r.mse_old) << "/" << fmt(r.mse_new) << ", ours "
                << fmt(r.ours_old) << "/" << fmt(r.ours_new) << '\n';
      out.push_back(std::move(r));
    }
    return out;
  }();
  return runs;
}

Outcome desk_experiment() {
  Checker c;
  const auto& runs = desk_runs();
  double joint = 0, ft = 0, mse = 0;
  int ours_wins = 0;
  std::string per_seed;
  for (const auto& r : runs) {
    joint += r.joint_old / runs.size();
    ft += r.ft_old / runs.size();
    mse += r.mse_old / runs.size();
    const bool win = r.ours_new >= r.mse_new && 100 * r.ours_old >= 100 * r.mse_old - kOldSlackPoints;
    ours_wins += win;
    per_seed += " [new " + fmt(100 * r.ours_new, 1) + " vs " + fmt(100 * r.mse_new, 1) + ", old " +
                fmt(100 * r.ours_old, 1) + " vs " + fmt(100 * r.mse_old, 1) + "]";
  }
  const double drop = 100 * (joint - ft);
  const double recovered = joint > ft ? (mse - ft) / (joint - ft) : 0.0;
  c.require(drop >= kForgettingPoints, "fine-tuning drops old mAP by only " + fmt(drop, 1) + " points");
  c.require(recovered >= kRecoveredShare, "MSE distillation recovers only " + fmt(100 * recovered, 1) + "% of the drop");
  c.require(ours_wins >= kSeedsRequired, "selective+Huber wins on " + std::to_string(ours_wins) + " of 3 seeds");
  c.note("old mAP joint " + fmt(100 * joint, 1) + ", finetune " + fmt(100 * ft, 1) + " (drop " + fmt(drop, 1) +
         "), MSE " + fmt(100 * mse, 1) + " (recovers " + fmt(100 * recovered, 1) + "%); ours wins " +
         std::to_string(ours_wins) + "/3:" + per_seed);
  return c.done();
}

Outcome desk_joint_map() {
  Checker c;
  std::string vals;
  for (const auto& r : desk_runs()) {
    c.require(r.joint_all >= kJointMap, "joint mAP " + fmt(r.joint_all));
    vals += " " + fmt(r.joint_all);
  }
  c.note("joint mAP@0.5 per seed:" + vals);
  return c.done();
}

Outcome desk_rpn() {
  Checker c;
  std::string vals;
  for (const auto& r : desk_runs()) {
    const double a = r.ours_rpn.groups[0].found_fraction, b = r.ours_rpn.groups[1].found_fraction;
    c.require(a >= kRpnFound && b >= kRpnFound, "found fraction " + fmt(a) + "/" + fmt(b));
    c.require(std::abs(a - b) <= kRpnSymmetry, "group asymmetry " + fmt(std::abs(a - b)));
    vals += " " + fmt(a) + "/" + fmt(b);
  }
  c.note("found fraction T1/T2 per seed:" + vals);
  return c.done();
}

// ---------------------------------------------------------------- 7 analysis instruments

Dataset grid_dataset(const std::vector<std::vector<int>>& images, int classes) {
  Dataset ds;
  for (int k = 1; k <= classes; ++k) ds.class_names.push_back("c" + std::to_string(k));
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string id = "i" + std::to_string(i);
    ds.images.push_back({id, 64, 64, "", ""});
    double x = 0;
    for (const int k : images[i]) {
      ds.annotations.push_back({id, k, {x, 0, x + 5, 5}, false});
      x += 6;
    }
  }
  return ds;
}

Outcome instruments() {
  Checker c;
  Rng rng(707);
  const ClassGroups groups{{1, 2}, {3, 4}};
  int bad_partitions = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<RoiObservation> obs;
    for (int i = rng.between(1, 50); i > 0; --i) {
      std::vector<double> l(5);
      for (auto& v : l) v = rng.normal() * 2;
      obs.push_back({rng.between(1, 4), l});
    }
    for (const auto& g : roi_partition(obs, groups).groups)
      if (g.count) bad_partitions += std::abs(g.correct + g.wrong_class + g.background - 1.0) > kPartitionTol;
  }
  c.require(bad_partitions == 0, std::to_string(bad_partitions) + " partitions do not sum to 1");

  int bad_confusion = 0;
  for (int t = 0; t < 300; ++t) {
    std::vector<std::vector<int>> imgs;
    for (int i = 0; i < 6; ++i) {
      std::vector<int> cls;
      for (int k = rng.between(0, 4); k > 0; --k) cls.push_back(rng.between(1, 3));
      imgs.push_back(cls);
    }
    const auto ds = grid_dataset(imgs, 3);
    std::vector<Detection> dets;
    for (const auto& a : ds.annotations)
      if (rng.bernoulli(0.7)) dets.push_back({a.image_id, rng.between(1, 3), rng.uniform(), a.box});
    const auto m = confusion_matrix(dets, ds);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        const double want = m.gt_counts[a] ? m.absolute[a][b] / static_cast<double>(m.gt_counts[a]) : 0.0;
        bad_confusion += m.normalized[a][b] != want;
      }
  }
  c.require(bad_confusion == 0, std::to_string(bad_confusion) + " normalized confusion entries differ");

  // Images {1,2,2}, {1}, {2,3}, {3,3}.
  const auto cooc = cooccurrence(grid_dataset({{1, 2, 2}, {1}, {2, 3}, {3, 3}}, 3));
  const std::vector<std::vector<double>> hand{{1.0, 1.0, 0.0}, {0.5, 1.5, 0.5}, {0.0, 0.5, 1.5}};
  c.require(cooc.values == hand, "constructed co-occurrence differs from the hand-computed matrix");
  ShapesConfig sc;
  sc.seed = 77;
  sc.n_images = 400;
  sc.classes.assign(default_archetypes().begin(), default_archetypes().begin() + 3);
  sc.min_objects = sc.max_objects = 1;
  sc.bias = {{1, 2, 1.0, 2}};
  const auto forced = cooccurrence(generate_shapes(sc));
  c.require(forced.values[0][1] == 2.0 && forced.values[2][0] == 0.0 && forced.values[2][1] == 0.0,
            "forced-bias co-occurrence entries differ");

  // Classes 4 and 5 co-occur with old classes 1 and 2; class 6 never does.
  std::string vals;
  for (const auto& r : desk_runs()) {
    const double linked = std::min(r.background.at(4), r.background.at(5));
    c.require(linked > r.background.at(6), "co-occurring classes do not score higher than the isolated one");
    vals += " [" + fmt(r.background.at(4), 2) + "," + fmt(r.background.at(5), 2) + " vs " +
            fmt(r.background.at(6), 2) + "]";
  }
  c.note("median teacher background logit, co-occurring vs isolated:" + vals);
  return c.done();
}

// ---------------------------------------------------------------- 8 loss study

Outcome loss_study() {
  Checker c;
  double prev = 0;
  std::string ratios;
  for (const double l : {2.0, 10.0, 50.0}) {
    const auto rows = loss_interpolation_study(l, 1.0, 0, 101);
    for (const auto& r : rows) c.require(r.mse >= r.huber, "MSE below Huber at l=" + fmt(l, 0));
    for (const auto& r : rows)
      if (r.l1 == 0.0) c.require(r.mse == 0.0 && r.huber == 0.0, "non-zero loss at distance 0");
    c.require(rows.back().l1 == 0.0, "interpolation does not reach the teacher");
    const double ratio = rows.front().mse / rows.front().huber;
    c.require(ratio > prev, "MSE/Huber ratio does not grow at l=" + fmt(l, 0));
    prev = ratio;
    ratios += " " + fmt(ratio, 2);
  }
  c.note("MSE/Huber ratio at l = 2, 10, 50:" + ratios);
  return c.done();
}

// ---------------------------------------------------------------- 9 determinism

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(CODKIT_CLI_PATH) + " " + args + " >>" + (work_dir() / "cli.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome determinism() {
  Checker c;
  const auto root = work_dir() / "determinism";
  const std::string preset = "--preset desk-ours --run.seed 5";
  c.require(run_cli("make-benchmark " + preset + " --out " + (root / "bench").string()) == 0, "make-benchmark failed");
  for (const char* run : {"a", "b"})
    c.require(run_cli("train " + preset + " --benchmark " + (root / "bench").string() + " --out " +
                      (root / run).string()) == 0,
              std::string("train run ") + run + " failed");
  int compared = 0;
  for (const char* f : {"task1/eval.json", "task2/eval.json", "sequence.json"}) {
    const auto a = slurp(root / "a" / f), b = slurp(root / "b" / f);
    c.require(!a.empty() && a == b, std::string(f) + " differs between runs");
    ++compared;
  }
  c.note(std::to_string(compared) + " eval files byte-identical across two desk-ours runs");
  return c.done();
}

}  // namespace

int main() {
  struct Criterion {
    std::string name;
    std::function<Outcome()> run;
    bool derived = false;
  };
  const std::vector<Criterion> criteria{
      {"1 geometry oracles", geometry},
      {"2 huber correctness", huber_checks},
      {"3 distillation loss oracles", distill_losses},
      {"4 selective distillation", selective},
      {"5 evaluation oracle", evaluation},
      {"6 desk continual experiment", desk_experiment},
      {"joint toy mAP", desk_joint_map, true},
      {"RPN recall and symmetry", desk_rpn, true},
      {"7 analysis instruments", instruments},
      {"8 loss interpolation study", loss_study},
      {"9 determinism", determinism},
  };
  int failures = 0;
  for (const auto& cr : criteria) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = cr.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << (cr.derived ? "derived check " : "criterion ") << cr.name << " (" << fmt(seconds_since(t0), 1)
              << " s): " << o.detail << std::endl;
  }
  std::cout << (failures ? "FAILED " + std::to_string(failures) + " checks" : "ALL PASS") << std::endl;
  return failures ? 1 : 0;
}
