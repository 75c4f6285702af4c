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

// Command-line harness: synthetic data, anchors, toy training, evaluation and gradient checks.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sspnet/dataset.hpp"
#include "sspnet/grad_consistency.hpp"
#include "sspnet/gradient_suite.hpp"
#include "sspnet/train.hpp"

namespace fs = std::filesystem;
using namespace sspnet;

namespace {

constexpr const char* kUsage =
    "usage: sspnet <subcommand> [options] [--section.key=value ...]\n"
    "\n"
    "subcommands:\n"
    "  gen-synth         write a synthetic PGM + JSON dataset\n"
    "  anchors-kmeans    cluster annotated boxes into anchor shapes\n"
    "  train-toy         train the toy detector and write a checkpoint\n"
    "  eval              score a checkpoint on a dataset\n"
    "  gradcheck         finite-difference checks over every op and module\n"
    "  grad-consistency  per-layer gradient decomposition and conflict report\n"
    "\n"
    "Every subcommand accepts --config FILE, --seed N and dotted config overrides.\n"
    "Run 'sspnet <subcommand> --help' for its options.\n";

const std::vector<std::string> kSubcommands{"gen-synth", "anchors-kmeans", "train-toy",
                                            "eval",      "gradcheck",      "grad-consistency"};

struct Overrides {
  std::vector<std::pair<std::string, std::string>> values;
};

// Pulls "--a.b=v" and "--a.b v" out of argv; everything else is left for CLI11.
Overrides split_overrides(std::vector<std::string>& args) {
  Overrides o;
  std::vector<std::string> rest;
  for (size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) == 0) {
      const std::string body = a.substr(2);
      const size_t eq = body.find('=');
      const std::string key = body.substr(0, eq);
      if (key.find('.') != std::string::npos) {
        if (eq != std::string::npos) {
          o.values.emplace_back(key, body.substr(eq + 1));
        } else if (i + 1 < args.size()) {
          o.values.emplace_back(key, args[++i]);
        } else {
          throw ArgumentError("override --" + key + " needs a value");
        }
        continue;
      }
    }
    rest.push_back(a);
  }
  args = std::move(rest);
  return o;
}

struct Common {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  Overrides overrides;

  void add(CLI::App* app) {
    app->add_option("--config", config_file, "JSON file of dotted config keys");
    app->add_option("--seed", seed, "master seed (overrides the config)");
  }

  void apply(ExperimentConfig& c) const {
    if (!config_file.empty()) c.merge(ExperimentConfig::read_json(config_file));
    for (const auto& [k, v] : overrides.values) c.set(k, v);
    if (seed) c.seed = *seed;
    c.validate();
  }

  ExperimentConfig build() const {
    ExperimentConfig c;
    apply(c);
    return c;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int cmd_gen_synth(const Common& common, const std::string& out, int count, const std::string& split) {
  const ExperimentConfig c = common.build();
  const int n = count >= 0 ? count : c.num_images;
  const Dataset d = gen_synthetic(c, out, n, split);
  const std::vector<GtBox> boxes = d.all_boxes();
  const ScalePartitions parts = partition_by_scale(boxes);
  size_t ignored = 0;
  for (const GtBox& g : boxes) ignored += g.ignore ? 1 : 0;
  std::cout << "wrote " << d.images.size() << " images, " << boxes.size() << " boxes (" << ignored << " ignored) to "
            << out << "\n"
            << "tiny1 " << parts.tiny1.size() << "  tiny2 " << parts.tiny2.size() << "  tiny3 " << parts.tiny3.size()
            << "  small " << parts.small.size() << "\n";
  return 0;
}

int cmd_anchors(const Common& common, const std::string& data, std::optional<int> k, const std::string& out) {
  ExperimentConfig c = common.build();
  if (k) c.anchors_k = *k;
  c.validate();
  const Dataset d = load_dataset(data);
  std::vector<GtBox> boxes;
  for (const GtBox& g : d.all_boxes())
    if (!g.ignore) boxes.push_back(g);
  const KMeansResult km = kmeans_anchors(boxes, c.anchors_k, Rng::for_stage(c.seed, "anchors").next());
  std::printf("%-4s %9s %9s %10s\n", "#", "width", "height", "area");
  nlohmann::json rows = nlohmann::json::array();
  for (size_t i = 0; i < km.centroids.size(); ++i) {
    const AnchorShape& a = km.centroids[i];
    std::printf("%-4zu %9.3f %9.3f %10.3f\n", i, a.w, a.h, a.w * a.h);
    rows.push_back({{"w", a.w}, {"h", a.h}});
  }
  std::vector<AnchorShape> ladder;
  for (const auto& level : geometric_ladder().per_level) ladder.insert(ladder.end(), level.begin(), level.end());
  const double ours = mean_best_iou(boxes, km.centroids), theirs = mean_best_iou(boxes, ladder);
  std::printf("mean best IoU %.4f (geometric ladder %.4f), %d iterations\n", ours, theirs, km.iterations);
  if (!out.empty()) {
    write_text(out, nlohmann::json{{"anchors", rows}, {"mean_best_iou", ours}, {"ladder_mean_best_iou", theirs},
                                   {"objective", km.objective}}
                            .dump(1) +
                        "\n");
  }
  return 0;
}

int cmd_train(const Common& common, const std::string& data, const std::string& eval_data, const std::string& out,
              const std::string& neck, const std::string& log) {
  ExperimentConfig c = common.build();
  if (!neck.empty()) c.neck = neck;
  c.validate();
  const Dataset train = load_dataset(data);
  std::optional<Dataset> held;
  if (!eval_data.empty()) held = load_dataset(eval_data);
  TrainOptions opt;
  opt.eval_set = held ? &*held : nullptr;
  opt.dump_dir = fs::path(out) / "nan_dump";
  opt.on_epoch = [](const EpochLog& e) {
    const MetricCell* cell = e.report.find(0.5, ScalePartition::Tiny);
    std::printf("epoch %2d  lr %.5f  loss %.6f  AP_tiny50 %s\n", e.epoch, e.lr, e.mean_loss,
                cell && cell->ap ? fmt("%.4f", *cell->ap).c_str() : "-");
    std::fflush(stdout);
  };
  const TrainResult r = train_toy(c, train, opt);
  save_checkpoint(out, r.detector, c, c.epochs);
  if (!log.empty()) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const EpochLog& e : r.epochs) {
      epochs.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"mean_loss", e.mean_loss}, {"report", e.report.to_json()}});
    }
    write_text(log, nlohmann::json{{"loss_curve", r.loss_curve}, {"epochs", epochs}}.dump(1) + "\n");
  }
  std::cout << "checkpoint written to " << out << "\n";
  return 0;
}

int cmd_eval(const Common& common, const std::string& checkpoint, const std::string& data, const std::string& out,
             const std::string& detections) {
  Checkpoint ck = load_checkpoint(checkpoint);
  common.apply(ck.config);
  const Dataset d = load_dataset(data);
  std::vector<Detection> dets;
  const MetricReport report = evaluate_detector(ck.detector, d, ck.config, &dets);
  std::cout << report.to_table();
  if (!out.empty()) write_text(out, report.to_json().dump(1) + "\n");
  if (!detections.empty()) {
    std::string lines;
    for (const Detection& det : dets) lines += detection_to_json(det).dump() + "\n";
    write_text(detections, lines);
  }
  return 0;
}

int cmd_gradcheck(const Common& common, int seeds, const std::string& only) {
  const ExperimentConfig c = common.build();
  GradSuiteOptions opt;
  opt.seeds = seeds;
  opt.base_seed = c.seed;
  opt.only = only;
  const GradSuiteReport r = run_gradient_suite(opt);
  if (r.entries.empty()) throw ArgumentError("no gradient check matches '" + only + "'");
  std::cout << r.to_table(false);
  std::cerr << "gradcheck: " << fmt("%.1f", r.seconds) << " s\n";
  std::cout << (r.passed() ? "all checks below 1e-4\n" : "FAILED: some checks at or above 1e-4\n");
  return r.passed() ? 0 : 1;
}

int cmd_grad_consistency(const Common& common, const std::string& data, const std::string& checkpoint, int scenes,
                         const std::string& out) {
  ExperimentConfig c = common.build();
  SspnetParams net;
  AnchorSpec anchors = geometric_ladder();
  if (!checkpoint.empty()) {
    Checkpoint ck = load_checkpoint(checkpoint);
    net = ck.detector.params.net;
    anchors = ck.detector.anchors;
  } else {
    net = init_detector(c, anchors).params.net;
  }

  // Controlled graph: autograd against the ψ decomposition at every aligned cell.
  double worst_residual = 0, worst_psi = 0;
  Index cells = 0;
  for (int s = 0; s < scenes; ++s) {
    const ControlledScene scene = random_scene(Rng::for_stage(c.seed, "grad-consistency/scene/" + std::to_string(s)).next(), 4, 1);
    const Index rows = scene.laterals.front().dim(2), cols = scene.laterals.front().dim(3);
    for (Index r = 0; r < rows; ++r)
      for (Index col = 0; col < cols; ++col) {
        const GradReport rep = verify_decomposition(scene, {r, col});
        worst_residual = std::max(worst_residual, rep.residual);
        for (int k = kFirstLevel; k <= kLastLevel; ++k) {
          worst_psi = std::max(worst_psi, std::abs(rep.psi_at(k) - psi(scene.attention, {r, col}, k)));
        }
        ++cells;
      }
  }

  nlohmann::json j{{"controlled", {{"scenes", scenes}, {"cells", cells}, {"max_residual", worst_residual},
                                   {"max_psi_error", worst_psi}}}};
  std::printf("controlled graph: %d scenes, %lld cells, max |autograd - sum psi_k g_k| = %.3e\n", scenes,
              static_cast<long long>(cells), worst_residual);

  if (!data.empty()) {
    const Dataset d = load_dataset(data);
    std::vector<SceneSample> samples;
    for (const ImageRecord& rec : d.images) samples.push_back({d.load_image(rec), d.gts.at(rec.id)});
    Rng rng = Rng::for_stage(c.seed, "grad-consistency/probes");
    LevelProbe probe;
    probe.weight = Eigen::VectorXd(net.neck.output_convs.front().weight.dim(0));
    for (Index i = 0; i < probe.weight.size(); ++i) probe.weight[i] = rng.normal();
    const std::vector<LevelProbe> probes(kNumLevels, probe);
    const ConflictSummary s = conflict_report(net, samples, anchors, c.pos_iou, probes);
    nlohmann::json rows = nlohmann::json::array();
    for (const ConflictSample& x : s.samples) {
      rows.push_back({{"row", x.location.row}, {"col", x.location.col}, {"baseline", x.baseline_mass}, {"sspnet", x.sspnet_mass}});
    }
    j["conflict"] = {{"samples", rows},
                     {"mean_baseline", s.mean_baseline},
                     {"mean_sspnet", s.mean_sspnet},
                     {"fraction_reduced", s.fraction_reduced}};
    std::printf("conflict mass over %zu tiny-object cells: baseline %.4e, sspnet %.4e, reduced at %.1f%%\n",
                s.samples.size(), s.mean_baseline, s.mean_sspnet, 100.0 * s.fraction_reduced);
  }
  if (!out.empty()) write_text(out, j.dump(1) + "\n");
  else std::cout << j.dump(1) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2 || std::find(kSubcommands.begin(), kSubcommands.end(), argv[1]) == kSubcommands.end()) {
    if (argc >= 2 && (std::string(argv[1]) == "--help" || std::string(argv[1]) == "-h")) {
      std::cout << kUsage;
      return 0;
    }
    if (argc >= 2) std::cerr << "unknown subcommand '" << argv[1] << "'\n\n";
    std::cerr << kUsage;
    return 1;
  }

  std::vector<std::string> args(argv + 2, argv + argc);
  Common common;
  try {
    common.overrides = split_overrides(args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  const std::string sub = argv[1];
  CLI::App app{"sspnet " + sub};
  app.name("sspnet " + sub);
  common.add(&app);

  std::string out, data, eval_data, checkpoint, split = "train", neck, log, only, detections;
  int count = -1, seeds = 100, scenes = 20;
  std::optional<int> k;
  if (sub == "gen-synth") {
    app.add_option("--out", out, "output directory")->required();
    app.add_option("--count", count, "number of images (default data.num_images)");
    app.add_option("--split", split, "split label; each label draws an independent stream");
  } else if (sub == "anchors-kmeans") {
    app.add_option("--data", data, "annotations.json or its directory")->required();
    app.add_option("--k", k, "number of anchor shapes (default anchors.k)");
    app.add_option("--out", out, "optional JSON output");
  } else if (sub == "train-toy") {
    app.add_option("--data", data, "training set")->required();
    app.add_option("--eval-data", eval_data, "held-out set for the per-epoch report");
    app.add_option("--out", out, "checkpoint directory")->required();
    app.add_option("--neck", neck, "sspnet or baseline");
    app.add_option("--log", log, "optional JSON training log");
  } else if (sub == "eval") {
    app.add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
    app.add_option("--data", data, "dataset to score")->required();
    app.add_option("--out", out, "optional JSON report");
    app.add_option("--detections", detections, "optional JSON-lines detections");
  } else if (sub == "gradcheck") {
    app.add_option("--seeds", seeds, "random seeds per check");
    app.add_option("--only", only, "run checks whose name starts with this prefix");
  } else {
    app.add_option("--data", data, "dataset for the conflict report");
    app.add_option("--checkpoint", checkpoint, "trained weights (default: fresh initialisation)");
    app.add_option("--scenes", scenes, "random controlled scenes");
    app.add_option("--out", out, "JSON output (default: stdout)");
  }

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (sub == "gen-synth") return cmd_gen_synth(common, out, count, split);
    if (sub == "anchors-kmeans") return cmd_anchors(common, data, k, out);
    if (sub == "train-toy") return cmd_train(common, data, eval_data, out, neck, log);
    if (sub == "eval") return cmd_eval(common, checkpoint, data, out, detections);
    if (sub == "gradcheck") return cmd_gradcheck(common, seeds, only);
    return cmd_grad_consistency(common, data, checkpoint, scenes, out);
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
