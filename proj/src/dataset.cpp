/* Copyright 2026 The sspnet-toy Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "sspnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "sspnet/errors.hpp"
#include "sspnet/rng.hpp"

namespace sspnet {

namespace fs = std::filesystem;

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

Index pgm_int(std::istream& in, const fs::path& path) {
  const std::string tok = pgm_token(in);
  try {
    size_t used = 0;
    const long v = std::stol(tok, &used);
    if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return static_cast<Index>(v);
  } catch (const std::exception&) {
    throw IoError("malformed PGM header in " + path.string());
  }
}

}  // namespace

Tensor read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  if (pgm_token(in) != "P5") throw IoError(path.string() + " is not a binary PGM (P5)");
  const Index w = pgm_int(in, path), h = pgm_int(in, path), maxval = pgm_int(in, path);
  if (maxval > 255) throw IoError(path.string() + ": only 8-bit PGM is supported");
  std::vector<unsigned char> bytes(static_cast<size_t>(w * h));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw IoError(path.string() + ": truncated pixel data");
  Tensor t({1, 1, h, w});
  for (Index i = 0; i < w * h; ++i) t[i] = static_cast<double>(bytes[static_cast<size_t>(i)]) / static_cast<double>(maxval);
  return t;
}

void write_pgm(const fs::path& path, const Tensor& image) {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 1) {
    throw DimensionError("write_pgm: expected [1,1,H,W], got " + shape_str(image.shape()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path.string());
  out << "P5\n" << image.dim(3) << " " << image.dim(2) << "\n255\n";
  for (Index i = 0; i < image.numel(); ++i) {
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0))));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Tensor Dataset::load_image(const ImageRecord& record) const {
  Tensor t = read_pgm(root / record.file);
  if (t.dim(2) != record.height || t.dim(3) != record.width) {
    throw DataError(record.file + ": annotated as " + std::to_string(record.width) + "x" +
                    std::to_string(record.height) + " but the file is " + shape_str(t.shape()));
  }
  return t;
}

std::vector<GtBox> Dataset::all_boxes() const {
  std::vector<GtBox> out;
  for (const auto& [id, list] : gts) out.insert(out.end(), list.begin(), list.end());
  return out;
}

Dataset load_dataset(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "annotations.json" : path;
  std::ifstream in(file);
  if (!in) throw IoError("cannot open annotations " + file.string());
  Dataset d;
  d.root = file.parent_path();
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    for (const auto& im : j.at("images")) {
      ImageRecord r{im.at("id").get<int>(), im.at("file").get<std::string>(), im.at("width").get<Index>(),
                    im.at("height").get<Index>()};
      if (d.gts.contains(r.id)) throw DataError("duplicate image id " + std::to_string(r.id));
      d.gts[r.id];
      d.images.push_back(std::move(r));
    }
    for (const auto& a : j.at("annotations")) {
      const int id = a.at("image_id").get<int>();
      auto it = d.gts.find(id);
      if (it == d.gts.end()) throw DataError("annotation refers to unknown image id " + std::to_string(id));
      const auto& b = a.at("bbox");
      GtBox g{{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()},
              a.value("ignore", false)};
      if (!(g.box.w > 0 && g.box.h > 0)) throw DataError("annotation with non-positive extent in image " + std::to_string(id));
      it->second.push_back(g);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed annotations " + file.string() + ": " + e.what());
  }
  return d;
}

void save_annotations(const Dataset& dataset, const fs::path& file) {
  nlohmann::json images = nlohmann::json::array(), annotations = nlohmann::json::array();
  for (const ImageRecord& r : dataset.images) {
    images.push_back({{"id", r.id}, {"file", r.file}, {"width", r.width}, {"height", r.height}});
    auto it = dataset.gts.find(r.id);
    if (it == dataset.gts.end()) continue;
    for (const GtBox& g : it->second) {
      annotations.push_back({{"image_id", r.id}, {"bbox", {g.box.x, g.box.y, g.box.w, g.box.h}}, {"ignore", g.ignore}});
    }
  }
  std::ofstream out(file);
  if (!out) throw IoError("cannot write annotations " + file.string());
  out << nlohmann::json{{"images", images}, {"annotations", annotations}}.dump(1) << "\n";
  if (!out) throw IoError("failed writing " + file.string());
}

namespace {

// Fraction of pixel (r, c) covered by box b.
double coverage(const Box& b, Index r, Index c) {
  return intersection_area(b, {static_cast<double>(c), static_cast<double>(r), 1.0, 1.0});
}

void paint(Tensor& img, const Box& b, double value, double alpha) {
  const Index h = img.dim(2), w = img.dim(3);
  const Index r0 = std::max<Index>(0, static_cast<Index>(std::floor(b.y)));
  const Index r1 = std::min<Index>(h, static_cast<Index>(std::ceil(b.y + b.h)));
  const Index c0 = std::max<Index>(0, static_cast<Index>(std::floor(b.x)));
  const Index c1 = std::min<Index>(w, static_cast<Index>(std::ceil(b.x + b.w)));
  for (Index r = r0; r < r1; ++r)
    for (Index c = c0; c < c1; ++c) {
      const double a = alpha * coverage(b, r, c);
      double& px = img.at(0, 0, r, c);
      px = (1 - a) * px + a * value;
    }
}

Tensor background(Index size, Rng& rng) {
  Tensor img({1, 1, size, size});
  const double base = rng.uniform(0.25, 0.4);
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 3; ++i) {
    waves.push_back({rng.uniform(0.02, 0.12), rng.uniform(0.02, 0.12), rng.uniform(0, 2 * std::numbers::pi), rng.uniform(0.02, 0.06)});
  }
  for (Index r = 0; r < size; ++r)
    for (Index c = 0; c < size; ++c) {
      double v = base + rng.uniform(-0.05, 0.05);
      for (const Wave& wv : waves) v += wv.amp * std::sin(2 * std::numbers::pi * (wv.fx * c + wv.fy * r) + wv.phase);
      img.at(0, 0, r, c) = v;
    }
  return img;
}

}  // namespace

Dataset gen_synthetic(const ExperimentConfig& config, const fs::path& dir, int count, std::string_view split) {
  config.validate();
  if (count < 0) throw ArgumentError("gen_synthetic: negative image count");
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());

  Dataset d;
  d.root = dir;
  const Index size = config.image_size;
  const std::string stage = "synth/" + std::string(split);
  for (int i = 0; i < count; ++i) {
    Rng rng = Rng::for_stage(config.seed, stage + "/" + std::to_string(i));
    Tensor img = background(size, rng);
    std::vector<GtBox> boxes;
    const int n = config.objects_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(config.objects_max - config.objects_min + 1)));
    for (int o = 0; o < n; ++o) {
      const double scale = rng.uniform(config.scale_min, config.scale_max);
      const double aspect = rng.uniform(1.0, 2.0);  // height / width, upright figures
      const double w = std::min<double>(scale / std::sqrt(aspect), size), h = std::min<double>(scale * std::sqrt(aspect), size);
      Box body{rng.uniform(0, size - w), rng.uniform(0, size - h), w, h};
      const double tone = rng.uniform(0.75, 0.95);
      Box visible = body;
      const bool occluded = rng.uniform() < config.occlusion;
      double cut = 0;
      int side = 0;
      if (occluded) {
        cut = rng.uniform(0.25, 0.5);
        side = static_cast<int>(rng.below(3));
      }
      paint(img, body, tone, 1.0);
      // Head: a brighter blob on the top quarter.
      const double head = std::max(0.5, 0.35 * w);
      paint(img, Box::centered(body.cx(), body.y + 0.5 * head, head, head), std::min(1.0, tone + 0.05), 0.9);
      if (occluded) {
        // A dark occluder covers part of the figure; the annotation keeps the visible part.
        Box cover = body;
        if (side == 0) {
          cover.w = cut * body.w;
          visible.x += cover.w;
          visible.w -= cover.w;
        } else if (side == 1) {
          cover.x += (1 - cut) * body.w;
          cover.w = cut * body.w;
          visible.w -= cover.w;
        } else {
          cover.y += (1 - cut) * body.h;
          cover.h = cut * body.h;
          visible.h -= cover.h;
        }
        cover.x -= 0.5;
        cover.w += 1.0;
        paint(img, cover, rng.uniform(0.05, 0.15), 1.0);
      }
      boxes.push_back({visible, std::sqrt(visible.area()) < 2.0});
    }
    ImageRecord rec{i, "images/" + std::string(split) + "_" + std::to_string(i) + ".pgm", size, size};
    write_pgm(dir / rec.file, img);
    d.gts[rec.id] = std::move(boxes);
    d.images.push_back(std::move(rec));
  }
  save_annotations(d, dir / "annotations.json");
  return d;
}

std::vector<Box> crop_windows(Index width, Index height, int crop_width, int crop_height, int overlap) {
  if (crop_width <= 0 || crop_height <= 0 || overlap < 0 || overlap >= std::min(crop_width, crop_height)) {
    throw ArgumentError("crop_windows: need positive crop sizes and overlap below both");
  }
  auto starts = [&](Index extent, Index crop) {
    std::vector<Index> s;
    if (extent <= crop) return std::vector<Index>{0};
    for (Index p = 0;; p += crop - overlap) {
      if (p + crop >= extent) {
        s.push_back(extent - crop);
        break;
      }
      s.push_back(p);
    }
    return s;
  };
  std::vector<Box> out;
  for (Index y : starts(height, crop_height))
    for (Index x : starts(width, crop_width)) {
      out.push_back({static_cast<double>(x), static_cast<double>(y), static_cast<double>(std::min<Index>(crop_width, width)),
                     static_cast<double>(std::min<Index>(crop_height, height))});
    }
  return out;
}

std::vector<GtBox> crop_boxes(std::span<const GtBox> gts, const Box& window) {
  std::vector<GtBox> out;
  for (const GtBox& g : gts) {
    const double inter = intersection_area(g.box, window);
    if (inter <= 0) continue;
    const double x0 = std::max(g.box.x, window.x), y0 = std::max(g.box.y, window.y);
    const double x1 = std::min(g.box.x + g.box.w, window.x + window.w), y1 = std::min(g.box.y + g.box.h, window.y + window.h);
    out.push_back({{x0 - window.x, y0 - window.y, x1 - x0, y1 - y0}, g.ignore || inter < 0.5 * g.box.area()});
  }
  return out;
}

Tensor crop_image(const Tensor& image, const Box& window) {
  const Index x = static_cast<Index>(window.x), y = static_cast<Index>(window.y);
  const Index w = static_cast<Index>(window.w), h = static_cast<Index>(window.h);
  if (x < 0 || y < 0 || x + w > image.dim(3) || y + h > image.dim(2)) throw ArgumentError("crop_image: window outside image");
  Tensor out({1, image.dim(1), h, w});
  for (Index c = 0; c < image.dim(1); ++c)
    for (Index r = 0; r < h; ++r)
      for (Index k = 0; k < w; ++k) out.at(0, c, r, k) = image.at(0, c, y + r, x + k);
  return out;
}

}  // namespace sspnet
