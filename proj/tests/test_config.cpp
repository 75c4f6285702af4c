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

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "sspnet/config.hpp"

using namespace sspnet;

TEST_CASE("defaults follow the training recipe") {
  const ExperimentConfig c;
  CHECK(c.loss.alpha == 0.01);
  CHECK(c.loss.beta == 1.0);
  CHECK(c.loss.mu1 == 1.0);
  CHECK(c.loss.mu2 == 1.0);
  CHECK(c.wns_lambda == 0.6);
  CHECK(c.lr == 0.002);
  CHECK(c.momentum == 0.9);
  CHECK(c.epochs == 10);
  CHECK(c.decay_epoch == 8);
  CHECK(c.decay_factor == 0.1);
  CHECK(c.crop_width == 640);
  CHECK(c.crop_height == 512);
  CHECK(c.crop_overlap == 30);
  CHECK(c.scale_min == 2.0);
  CHECK(c.scale_max == 28.0);
  CHECK(c.neck == "sspnet");
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("set parses each field type") {
  ExperimentConfig c;
  c.set("optim.lr", "0.05");
  c.set("optim.epochs", "3");
  c.set("anchors.kmeans", "false");
  c.set("model.neck", "baseline");
  c.set("seed", "18446744073709551615");
  c.set("wns.lambda", "1");
  CHECK(c.lr == 0.05);
  CHECK(c.epochs == 3);
  CHECK_FALSE(c.kmeans_anchors);
  CHECK(c.neck == "baseline");
  CHECK(c.seed == 18446744073709551615ULL);
  CHECK(c.wns_lambda == 1.0);
  c.set("anchors.kmeans", "1");
  CHECK(c.kmeans_anchors);

  CHECK_THROWS_AS(c.set("optim.learning_rate", "1"), ArgumentError);
  CHECK_THROWS_AS(c.set("optim.epochs", "2.5"), ArgumentError);
  CHECK_THROWS_AS(c.set("optim.lr", "fast"), ArgumentError);
  CHECK_THROWS_AS(c.set("anchors.kmeans", "yes please"), ArgumentError);
  CHECK_THROWS_AS(c.set("seed", "-1"), ArgumentError);
}

TEST_CASE("validation") {
  auto bad = [](const char* key, const char* value) {
    ExperimentConfig c;
    c.set(key, value);
    return c;
  };
  CHECK_THROWS_AS(bad("model.neck", "fpn").validate(), ArgumentError);
  CHECK_THROWS_AS(bad("data.image_size", "48").validate(), ArgumentError);
  CHECK_THROWS_AS(bad("wns.lambda", "1.5").validate(), ArgumentError);
  CHECK_THROWS_AS(bad("anchors.pos_iou", "0").validate(), ArgumentError);
  CHECK_THROWS_AS(bad("crop.overlap", "512").validate(), ArgumentError);
  CHECK_THROWS_AS(bad("loss.alpha", "-1").validate(), ArgumentError);
  CHECK_THROWS_AS(bad("optim.momentum", "1").validate(), ArgumentError);
  CHECK_NOTHROW(bad("optim.lr", "0").validate());
}

TEST_CASE("json round trip and partial merge") {
  ExperimentConfig c;
  c.set("optim.lr", "0.1234567890123");
  c.set("model.neck", "baseline");
  c.set("seed", "99");
  const ExperimentConfig back = ExperimentConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
  CHECK(back.to_json() == c.to_json());
  CHECK(back.lr == 0.1234567890123);

  ExperimentConfig m;
  m.merge({{"optim.epochs", 2}, {"loss.beta", 0.5}});
  CHECK(m.epochs == 2);
  CHECK(m.loss.beta == 0.5);
  CHECK(m.lr == 0.002);
  CHECK(m.loss.alpha == 0.01);

  CHECK(ExperimentConfig::from_json(nlohmann::json::object()).to_json() == ExperimentConfig{}.to_json());
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"optim.epochs", "two"}}), ArgumentError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"optim.epochs", 2.5}}), ArgumentError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"seed", -3}}), ArgumentError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"unknown", 1}}), ArgumentError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json::array()), ArgumentError);
}

TEST_CASE("loading files") {
  const auto dir = std::filesystem::temp_directory_path() / "sspnet_test_config";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "ok.json") << R"({"optim.lr": 0.01, "model.neck": "baseline"})";
  std::ofstream(dir / "broken.json") << "{ not json";
  const ExperimentConfig c = ExperimentConfig::load(dir / "ok.json");
  CHECK(c.lr == 0.01);
  CHECK(c.neck == "baseline");
  CHECK_THROWS_AS(ExperimentConfig::load(dir / "broken.json"), ArgumentError);
  CHECK_THROWS_AS(ExperimentConfig::load(dir / "missing.json"), IoError);
  std::filesystem::remove_all(dir);
}
