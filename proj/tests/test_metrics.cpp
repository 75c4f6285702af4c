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

#include <cstdlib>
#include <fstream>

#include "sspnet/metrics.hpp"
#include "sspnet/rng.hpp"
#include "metrics_reference.hpp"

using namespace sspnet;

using namespace sspnet::testing;

TEST_CASE("matching examples") {
  const std::vector<GtBox> one{{{0, 0, 10, 10}}};
  const std::vector<Detection> exact{{0, {0, 0, 10, 10}, 0.9}};
  CHECK(match_detections(exact, one, 0.5).det_flags == std::vector<F>{F::TruePositive});

  const std::vector<Detection> twice{{0, {0, 0, 10, 10}, 0.9}, {0, {1, 0, 10, 10}, 0.8}};
  auto m = match_detections(twice, one, 0.5);
  CHECK(m.det_flags == std::vector<F>{F::TruePositive, F::FalsePositive});
  CHECK(m.gt_matched == std::vector<bool>{true});

  const std::vector<GtBox> ignored{{{0, 0, 10, 10}, true}};
  auto mi = match_detections(twice, ignored, 0.5);
  CHECK(mi.det_flags == std::vector<F>{F::Ignored, F::Ignored});
  CHECK(mi.n_gt == 0);
}

TEST_CASE("AP and MR examples") {
  CHECK(*average_precision(std::vector<F>{F::TruePositive, F::TruePositive}, 2) == 1.0);
  CHECK(*average_precision(std::vector<F>{F::FalsePositive, F::FalsePositive}, 2) == 0.0);
  CHECK(*average_precision(std::vector<F>{F::TruePositive, F::FalsePositive, F::TruePositive}, 2) ==
        doctest::Approx(0.5 + 0.5 * 2.0 / 3.0).epsilon(1e-15));
  CHECK(*average_precision(std::vector<F>{}, 3) == 0.0);
  CHECK_FALSE(average_precision(std::vector<F>{F::FalsePositive}, 0).has_value());

  CHECK(*miss_rate(std::vector<F>{F::TruePositive, F::TruePositive}, 2) == 0.0);
  CHECK(*miss_rate(std::vector<F>{F::FalsePositive}, 2) == 1.0);
  CHECK(*miss_rate(std::vector<F>{F::TruePositive, F::TruePositive, F::FalsePositive, F::TruePositive}, 4) == 0.25);
  CHECK_FALSE(miss_rate(std::vector<F>{}, 0).has_value());
}

TEST_CASE("randomized small instances agree with the brute-force reference") {
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    Rng rng(seed);
    const int n_gt = static_cast<int>(rng.below(4)), n_det = static_cast<int>(rng.below(4));
    std::vector<GtBox> gts;
    for (int i = 0; i < n_gt; ++i) {
      gts.push_back({{rng.uniform(0, 20), rng.uniform(0, 20), rng.uniform(3, 12), rng.uniform(3, 12)}, rng.uniform() < 0.2});
    }
    std::vector<Detection> dets;
    for (int i = 0; i < n_det; ++i) {
      const Box b = !gts.empty() && rng.uniform() < 0.7 ? jitter(gts[rng.below(gts.size())].box, rng, 3)
                                                          : Box{rng.uniform(0, 20), rng.uniform(0, 20), rng.uniform(3, 12), rng.uniform(3, 12)};
      dets.push_back({0, b, rng.uniform()});
    }
    std::stable_sort(dets.begin(), dets.end(), [](auto& a, auto& b) { return a.score > b.score; });
    const double thr = std::vector<double>{0.25, 0.5, 0.75}[rng.below(3)];
    MatchResult m = match_detections(dets, gts, thr);
    const auto ref = reference_match(dets, gts, thr);
    CHECK(m.det_flags == ref);
    if (m.n_gt > 0) {
      CHECK(std::abs(*average_precision(m.det_flags, m.n_gt) - reference_ap(ref, m.n_gt)) <= 1e-12);
      Index tp = std::count(ref.begin(), ref.end(), F::TruePositive);
      CHECK(*miss_rate(m.det_flags, m.n_gt) == 1.0 - double(tp) / double(m.n_gt));
    }
  }
}

TEST_CASE("AP monotonicity under appended TPs and FPs") {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    Rng rng(seed);
    std::vector<F> flags;
    const Index n_gt = 1 + static_cast<Index>(rng.below(8));
    Index tp = 0;
    for (int i = 0; i < 10; ++i) {
      const bool t = tp < n_gt - 1 && rng.uniform() < 0.5;
      tp += t;
      flags.push_back(t ? F::TruePositive : F::FalsePositive);
    }
    const double base = *average_precision(flags, n_gt);
    auto with_tp = flags, with_fp = flags;
    with_tp.push_back(F::TruePositive);
    with_fp.push_back(F::FalsePositive);
    CHECK(*average_precision(with_tp, n_gt) >= base);
    CHECK(*average_precision(with_fp, n_gt) <= base);
  }
}

TEST_CASE("evaluate: empty, perfect, unknown image") {
  GroundTruth gts;
  gts[0] = {{{0, 0, 5, 5}}, {{20, 20, 10, 10}}, {{40, 0, 25, 25}}};
  gts[1] = {{{3, 3, 15, 15}}};
  MetricReport empty = evaluate({}, gts);
  CHECK(empty.cells.size() == kDefaultIouThresholds.size() * kDefaultPartitions.size());
  for (const auto& c : empty.cells) {
    if (c.n_gt == 0) {
      CHECK_FALSE(c.ap.has_value());
      continue;
    }
    CHECK(*c.ap == 0.0);
    CHECK(*c.mr == 1.0);
  }

  std::vector<Detection> perfect;
  for (const auto& [id, list] : gts)
    for (const auto& g : list) perfect.push_back({id, g.box, 0.9});
  for (const auto& c : evaluate(perfect, gts).cells) {
    if (c.n_gt == 0) continue;
    CHECK(*c.ap == 1.0);
    CHECK(*c.mr == 0.0);
  }
  CHECK(evaluate(perfect, gts).find(0.5, ScalePartition::Tiny1)->n_gt == 1);
  CHECK(evaluate(perfect, gts).find(0.5, ScalePartition::All)->n_gt == 4);

  const std::vector<Detection> stray{{7, {0, 0, 1, 1}, 0.5}};
  CHECK_THROWS_AS(evaluate(stray, gts), DataError);
  CHECK(evaluate({}, GroundTruth{}).cells.size() == 18);
}

TEST_CASE("raising the IoU threshold never raises AP") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed + 9000);
    GroundTruth gts;
    std::vector<Detection> dets;
    for (int img = 0; img < 3; ++img) {
      auto& list = gts[img];
      for (int i = 0; i < 4; ++i) list.push_back({{rng.uniform(0, 60), rng.uniform(0, 60), rng.uniform(3, 30), rng.uniform(3, 30)}});
      for (int i = 0; i < 5; ++i) dets.push_back({img, jitter(list[rng.below(list.size())].box, rng, 4), rng.uniform()});
    }
    MetricReport r = evaluate(dets, gts);
    for (ScalePartition p : kDefaultPartitions) {
      const auto *a = r.find(0.25, p), *b = r.find(0.5, p), *c = r.find(0.75, p);
      if (!a->ap) continue;
      CHECK(*b->ap <= *a->ap);
      CHECK(*c->ap <= *b->ap);
    }
    CHECK(evaluate(dets, gts).to_json() == r.to_json());
  }
}

TEST_CASE("golden report") {
  auto [dets, gts] = golden_instance();
  const MetricReport ref = reference_report(dets, gts);
  const MetricReport got = evaluate(dets, gts);
  REQUIRE(got.cells.size() == ref.cells.size());
  for (size_t i = 0; i < got.cells.size(); ++i) {
    CHECK(got.cells[i].n_gt == ref.cells[i].n_gt);
    CHECK(got.cells[i].ap.has_value() == ref.cells[i].ap.has_value());
    if (got.cells[i].ap) {
      CHECK(*got.cells[i].ap == doctest::Approx(*ref.cells[i].ap).epsilon(1e-12));
      CHECK(*got.cells[i].mr == doctest::Approx(*ref.cells[i].mr).epsilon(1e-12));
    }
  }

  const std::string path = std::string(SSPNET_TEST_DATA) + "/golden_report.json";
  if (std::getenv("SSPNET_WRITE_GOLDEN")) std::ofstream(path) << ref.to_json().dump(1) << "\n";
  std::ifstream in(path);
  REQUIRE(in.good());
  const nlohmann::json golden = nlohmann::json::parse(in);
  const nlohmann::json mine = got.to_json();
  REQUIRE(golden.size() == mine.size());
  for (size_t i = 0; i < golden.size(); ++i) {
    CHECK(golden[i]["partition"] == mine[i]["partition"]);
    CHECK(golden[i]["iou"] == mine[i]["iou"]);
    CHECK(golden[i]["n_gt"] == mine[i]["n_gt"]);
    for (const char* key : {"ap", "mr"}) {
      REQUIRE(golden[i][key].is_null() == mine[i][key].is_null());
      if (!golden[i][key].is_null()) CHECK(std::abs(golden[i][key].get<double>() - mine[i][key].get<double>()) <= 1e-12);
    }
  }
  CHECK(evaluate(dets, gts).to_json() == mine);
}

TEST_CASE("detection JSON records") {
  const Detection d{3, {1.5, 2, 3, 4.25}, 0.125};
  const Detection back = detection_from_json(nlohmann::json::parse(detection_to_json(d).dump()));
  CHECK(back.image_id == 3);
  CHECK(back.box == d.box);
  CHECK(back.score == 0.125);
  CHECK_THROWS_AS(detection_from_json(nlohmann::json{{"image_id", 1}}), DataError);
  CHECK_THROWS_AS(detection_from_json(nlohmann::json{{"image_id", 1}, {"bbox", {1, 2}}, {"score", 0.5}}), DataError);
}
