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

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "codkit/data.hpp"
#include "codkit/eval.hpp"

using namespace codkit;
namespace fs = std::filesystem;

namespace {

const fs::path& root() {
  static const fs::path dir = [] {
    const auto d = fs::temp_directory_path() / "codkit_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(CODKIT_CLI_PATH) + " " + args + " >>" + (root() / "cli.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

nlohmann::json load(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in);
  return nlohmann::json::parse(in);
}

const std::string kSmall =
    "--preset desk-ours --dataset.n_train 30 --dataset.n_test 10 --trainer.iterations 6 --trainer.lr_decay 3";

// Benchmark plus a two-task run shared by the cases below.
const fs::path& trained_run() {
  static const fs::path dir = [] {
    const auto d = root() / "run";
    REQUIRE(run("make-benchmark " + kSmall + " --out " + (d / "benchmark").string()) == 0);
    REQUIRE(run("train " + kSmall + " --out " + d.string()) == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("make-benchmark writes tasks and refuses to overwrite") {
  const auto dir = root() / "bench";
  REQUIRE(run("make-benchmark " + kSmall + " --out " + dir.string()) == 0);
  for (const char* f : {"task1.json", "task2.json", "test.json", "config.ini", "manifest.json", "outputs.json"})
    CHECK(fs::exists(dir / f));
  const auto manifest = load(dir / "manifest.json");
  CHECK(manifest.at("tasks").size() == 2);
  CHECK(manifest.at("config_hash").get<std::string>().size() == 16);
  CHECK(run("make-benchmark " + kSmall + " --out " + dir.string()) == 2);
  CHECK(run("make-benchmark " + kSmall + " --out " + dir.string() + " --force") == 0);
}

TEST_CASE("train writes checkpoints, ledgers and provenance") {
  const auto& dir = trained_run();
  for (const char* f : {"task1/model.json", "task1/model.bin", "task2/ledger.csv", "task2/eval.json", "sequence.json"})
    CHECK(fs::exists(dir / f));
  const auto outputs = load(dir / "outputs.json");
  CHECK(outputs.at("command") == "train");
  const std::string hash = outputs.at("config_hash").get<std::string>();
  CHECK(hash.size() == 16);
  for (const auto& f : outputs.at("files")) {
    CHECK(f.at("config_hash") == hash);
    CHECK(f.contains("toolkit_version"));
  }
  CHECK(load(dir / "sequence.json").at("map_matrix").size() == 2);
}

TEST_CASE("evaluate") {
  const auto& dir = trained_run();
  const auto test = (dir / "benchmark" / "test.json").string();
  CHECK(run("evaluate --checkpoint " + (dir / "task2/model.json").string() + " --dataset " + test + " --out " +
            (root() / "eval_ckpt").string()) == 0);
  CHECK(fs::exists(root() / "eval_ckpt" / "eval.json"));
  CHECK(run("evaluate --checkpoint " + (root() / "missing.json").string() + " --dataset " + test) == 2);
  CHECK(run("evaluate --dataset " + (root() / "missing_test.json").string() + " --detections x.json") == 2);

  const Dataset ds = read_dataset(test);
  std::vector<Detection> perfect;
  for (const auto& a : ds.annotations) perfect.push_back({a.image_id, a.class_id, 1.0, a.box});
  const auto dets = root() / "perfect.json";
  write_detections(perfect, dets);
  REQUIRE(run("evaluate --detections " + dets.string() + " --dataset " + test + " --out " +
              (root() / "eval_voc").string()) == 0);
  CHECK(load(root() / "eval_voc" / "eval.json").at("overall_map").get<double>() == doctest::Approx(1.0));
  REQUIRE(run("evaluate --detections " + dets.string() + " --dataset " + test + " --protocol coco --out " +
              (root() / "eval_coco").string()) == 0);
  std::ifstream summary(root() / "eval_coco" / "summary.csv");
  std::string header;
  std::getline(summary, header);
  CHECK(header == "AP,AP50,AP75");
  CHECK(load(root() / "eval_coco" / "eval.json").contains("per_class_ap75"));
}

TEST_CASE("analyze") {
  const auto& dir = trained_run();
  const auto bench = (dir / "benchmark").string();
  REQUIRE(run("analyze losses --l 10 --delta 1 --out " + (root() / "losses").string()) == 0);
  std::ifstream csv(root() / "losses" / "loss_study.csv");
  std::string line;
  int rows = 0;
  bool header = true;
  while (std::getline(csv, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    REQUIRE(v.size() == 5);
    CHECK(v[3] >= v[4]);
    ++rows;
  }
  CHECK(rows == 101);

  REQUIRE(run("analyze roi --checkpoint " + (dir / "task2/model.json").string() + " --benchmark " + bench +
              " --out " + (root() / "roi").string()) == 0);
  for (const auto& g : load(root() / "roi" / "roi_partition.json").at("groups")) {
    if (g.at("count").get<int>() == 0) continue;
    const double sum = g.at("correct").get<double>() + g.at("wrong_class").get<double>() +
                       g.at("background").get<double>();
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(run("analyze cooc --benchmark " + bench + " --out " + (root() / "cooc").string()) == 0);
  CHECK(fs::exists(root() / "cooc" / "cooccurrence.svg"));
  CHECK(run("analyze rpn --checkpoint " + (dir / "task2/model.json").string() + " --benchmark " + bench +
            " --out " + (root() / "rpn").string()) == 0);
  CHECK(run("analyze bkg --checkpoint " + (dir / "task1/model.json").string() + " --task " + bench +
            "/task2.json --out " + (root() / "bkg").string()) == 0);
  CHECK(load(root() / "bkg" / "outputs.json").at("files").size() == 2);
  CHECK(run("analyze nonsense --out " + (root() / "x").string()) == 2);
}

TEST_CASE("report compares runs") {
  const auto& dir = trained_run();
  REQUIRE(run("report --run " + dir.string() + " --label a --out " + (root() / "report").string()) == 0);
  std::ifstream csv(root() / "report" / "comparison.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "method,T1,T2,task_average,mAP");
}

TEST_CASE("usage errors exit with 2") {
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("train --config " + (root() / "absent.ini").string()) == 2);
  CHECK(run("make-benchmark --trainer.bogus 1 --out " + (root() / "b2").string()) == 2);
  CHECK(run("make-benchmark --trainer.iterations") == 2);
  CHECK(run("evaluate --protocol voc50") == 2);
  CHECK(run("--version") == 0);
}
