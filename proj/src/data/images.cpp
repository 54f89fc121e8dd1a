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

#include <cmath>
#include <fstream>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "codkit/data.hpp"
#include "codkit/error.hpp"
#include "codkit/random.hpp"

namespace codkit {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) out.push_back(item);
  return out;
}

// Membership test in box-normalized coordinates u, v in [0, 1].
bool inside(const std::string& shape, double u, double v) {
  const double du = u - 0.5, dv = v - 0.5;
  if (shape == "square") return true;
  if (shape == "circle") return du * du + dv * dv <= 0.25;
  if (shape == "triangle") return std::abs(du) <= 0.5 * v;
  if (shape == "diamond") return std::abs(du) + std::abs(dv) <= 0.5;
  if (shape == "plus") return std::abs(du) <= 1.0 / 6.0 || std::abs(dv) <= 1.0 / 6.0;
  if (shape == "ring") {
    const double r2 = du * du + dv * dv;
    return r2 <= 0.25 && r2 >= 0.09;
  }
  if (shape == "cross") return std::abs(u - v) <= 0.2 || std::abs(u + v - 1.0) <= 0.2;
  if (shape == "frame") return std::max(std::abs(du), std::abs(dv)) >= 0.3;
  throw InvalidInput("unknown synthetic shape '" + shape + "'");
}

}  // namespace

Image render_synthetic(const std::string& descriptor, int width, int height) {
  const std::string prefix = "synth:v1;";
  if (descriptor.rfind(prefix, 0) != 0) throw InvalidInput("not a synthetic descriptor: " + descriptor);
  std::uint64_t seed = 0;
  double noise = 0.0;
  std::array<double, 3> bg{0, 0, 0};
  Image img({3, height, width});
  struct Obj {
    std::string shape;
    std::array<double, 3> color;
    int x1, y1, x2, y2;
  };
  std::vector<Obj> objs;
  try {
    for (const auto& field : split(descriptor.substr(prefix.size()), ';')) {
      const auto eq = field.find('=');
      const std::string key = field.substr(0, eq), val = field.substr(eq + 1);
      if (key == "seed") {
        seed = std::stoull(val);
      } else if (key == "noise") {
        noise = std::stod(val);
      } else if (key == "bg") {
        const auto p = split(val, ',');
        for (int c = 0; c < 3; ++c) bg[c] = std::stod(p.at(c));
      } else if (key == "o") {
        const auto p = split(val, ',');
        Obj o{p.at(0), {std::stod(p.at(1)), std::stod(p.at(2)), std::stod(p.at(3))},
              std::stoi(p.at(4)), std::stoi(p.at(5)), std::stoi(p.at(6)), std::stoi(p.at(7))};
        objs.push_back(o);
      }
    }
  } catch (const std::exception& e) {
    throw InvalidInput("malformed synthetic descriptor: " + descriptor);
  }
  std::vector<double> base(3 * static_cast<std::size_t>(width) * height);
  for (int c = 0; c < 3; ++c) {
    std::fill(base.begin() + static_cast<std::ptrdiff_t>(c) * width * height,
              base.begin() + static_cast<std::ptrdiff_t>(c + 1) * width * height, bg[c]);
  }
  for (const auto& o : objs) {
    const double w = o.x2 - o.x1, h = o.y2 - o.y1;
    for (int y = std::max(0, o.y1); y < std::min(height, o.y2); ++y) {
      for (int x = std::max(0, o.x1); x < std::min(width, o.x2); ++x) {
        if (!inside(o.shape, (x + 0.5 - o.x1) / w, (y + 0.5 - o.y1) / h)) continue;
        for (int c = 0; c < 3; ++c) base[(static_cast<std::size_t>(c) * height + y) * width + x] = o.color[c];
      }
    }
  }
  Rng rng(seed);
  for (std::size_t i = 0; i < base.size(); ++i) {
    img.data[i] = static_cast<Real>(std::clamp(base[i] + noise * rng.normal(), 0.0, 1.0));
  }
  return img;
}

namespace {

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError(path.string(), "cannot open image");
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  if (magic != "P6" || w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw IngestionError(path.string(), "unsupported PPM header");
  }
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw IngestionError(path.string(), "truncated PPM data");
  Image img({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<Real>(raw[(static_cast<std::size_t>(y) * w + x) * 3 + c]) / maxval;
  return img;
}

}  // namespace

Image decode_image_file(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".ppm") return read_ppm(path);
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IngestionError(path.string(), "cannot decode image");
  Image img({3, bgr.rows, bgr.cols});
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<unsigned char>(y);
    for (int x = 0; x < bgr.cols; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<Real>(row[x * 3 + (2 - c)]) / 255.0f;
  }
  return img;
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const int h = image.dim(1), w = image.dim(2);
  out << "P6\n" << w << ' ' << h << "\n255\n";
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.put(static_cast<char>(std::lround(std::clamp<Real>(image.at(c, y, x), 0, 1) * 255)));
}

Image flip_horizontal(const Image& image) {
  Image out(image.shape);
  const int ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  for (int c = 0; c < ch; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = image.at(c, y, w - 1 - x);
  return out;
}

std::vector<Annotation> flip_horizontal(std::vector<Annotation> anns, double width) {
  for (auto& a : anns) {
    const double x1 = width - a.box.x_max, x2 = width - a.box.x_min;
    a.box.x_min = x1;
    a.box.x_max = x2;
  }
  return anns;
}

namespace {

void check_size(const Image& img, const ImageRecord& record) {
  if (img.dim(1) != record.height || img.dim(2) != record.width) {
    throw InvalidInput("image " + record.image_id + " does not match its recorded size");
  }
}

}  // namespace

std::shared_ptr<const Image> ImageStore::load(const ImageRecord& record) {
  {
    std::lock_guard lock(mutex_);
    const auto it = cache_.find(record.source);
    if (it != cache_.end()) {
      check_size(*it->second, record);
      return it->second;
    }
  }
  Image img = record.source.rfind("synth:", 0) == 0
                  ? render_synthetic(record.source, record.width, record.height)
                  : decode_image_file(record.source);
  check_size(img, record);
  auto shared = std::make_shared<const Image>(std::move(img));
  std::lock_guard lock(mutex_);
  if (cache_.size() < max_cached_) cache_.emplace(record.source, shared);
  return shared;
}

}  // namespace codkit
