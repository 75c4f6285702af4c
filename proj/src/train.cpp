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

#include "sspnet/train.hpp"

#include <cmath>
#include <fstream>
#include <map>

namespace sspnet {

namespace fs = std::filesystem;

namespace {

void shuffle(std::vector<size_t>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

[[noreturn]] void numeric_failure(const std::vector<std::pair<std::string, Tensor>>& bad, const fs::path& dump_dir,
                                  const std::string& where) {
  std::string msg = "non-finite values " + where + ":";
  if (!dump_dir.empty()) {
    std::error_code ec;
    fs::create_directories(dump_dir, ec);
  }
  for (const auto& [name, t] : bad) {
    Index count = 0;
    for (Index i = 0; i < t.numel(); ++i) count += std::isfinite(t[i]) ? 0 : 1;
    msg += "\n  " + name + " " + shape_str(t.shape()) + ": " + std::to_string(count) + " non-finite";
    if (!dump_dir.empty()) {
      try {
        save_sspt(t, dump_dir / (name + ".sspt"));
      } catch (const Error&) {
        msg += " (dump failed)";
      }
    }
  }
  if (!dump_dir.empty()) msg += "\n  tensors written to " + dump_dir.string();
  throw NumericError(msg);
}

}  // namespace

double lr_at_epoch(const ExperimentConfig& config, int epoch) {
  return epoch >= config.decay_epoch ? config.lr * config.decay_factor : config.lr;
}

MetricReport evaluate_detector(const Detector& det, const Dataset& data, const ExperimentConfig& config,
                               std::vector<Detection>* detections) {
  std::vector<Detection> all;
  for (const ImageRecord& rec : data.images) {
    std::vector<Detection> d = detect(det, data.load_image(rec), rec.id, config);
    all.insert(all.end(), d.begin(), d.end());
  }
  MetricReport report = evaluate(all, data.gts);
  if (detections) *detections = std::move(all);
  return report;
}

TrainResult train_toy(const ExperimentConfig& config, const Dataset& train, const TrainOptions& options) {
  config.validate();
  if (train.images.empty()) throw DataError("train_toy: empty training set");
  TrainResult result;
  const std::vector<GtBox> boxes = train.all_boxes();
  result.detector = init_detector(config, choose_anchors(config, boxes));
  Detector& det = result.detector;

  std::vector<Tensor> images;
  for (const ImageRecord& rec : train.images) images.push_back(train.load_image(rec));

  std::vector<std::pair<std::string, Tensor*>> params;
  DetectorParams::visit(det.params, "", [&](const std::string& name, Tensor& t) { params.emplace_back(name, &t); });
  std::vector<Tensor> velocity;
  for (const auto& [name, t] : params) velocity.push_back(Tensor::zeros(t->shape()));

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = lr_at_epoch(config, epoch);
    std::vector<size_t> order(images.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng order_rng = Rng::for_stage(config.seed, "train/order/" + std::to_string(epoch));
    shuffle(order, order_rng);
    double epoch_loss = 0;
    for (size_t step = 0; step < order.size(); ++step) {
      const size_t i = order[step];
      const std::uint64_t sample_seed =
          Rng::for_stage(config.seed, "train/sample/" + std::to_string(epoch) + "/" + std::to_string(step)).next();
      Tape tape;
      ParamBinding bind(tape);
      const DetectorPass pass = detector_forward(det, tape.constant(images[i]), bind);
      const StepLosses losses = detector_losses(det, pass, train.gts.at(train.images[i].id), config, sample_seed, bind);
      const double loss = losses.total.value().item();
      const std::string where = "at epoch " + std::to_string(epoch) + ", image " + train.images[i].file;
      if (!std::isfinite(loss)) {
        std::vector<std::pair<std::string, Tensor>> bad{{"loss.rpn", losses.rpn.value()},
                                                        {"loss.head", losses.head.value()},
                                                        {"loss.attention", losses.attention.value()},
                                                        {"rpn_outputs", pass.rpn.value()},
                                                        {"features", pass.features.value()}};
        std::erase_if(bad, [](const auto& e) { return e.second.all_finite(); });
        numeric_failure(bad, options.dump_dir, where);
      }
      tape.backward(losses.total);
      std::vector<Tensor> grads;
      std::vector<std::pair<std::string, Tensor>> bad;
      for (const auto& [name, t] : params) {
        grads.push_back(bind.grad(*t));
        if (!grads.back().all_finite()) bad.emplace_back("grad." + name, grads.back());
      }
      if (!bad.empty()) numeric_failure(bad, options.dump_dir, where);
      for (size_t p = 0; p < params.size(); ++p) {
        velocity[p].data() = config.momentum * velocity[p].data() + grads[p].data();
        params[p].second->data() -= lr * velocity[p].data();
      }
      result.loss_curve.push_back(loss);
      epoch_loss += loss;
    }
    EpochLog log{epoch, lr, epoch_loss / static_cast<double>(images.size()),
                 evaluate_detector(det, options.eval_set ? *options.eval_set : train, config)};
    if (options.on_epoch) options.on_epoch(log);
    result.epochs.push_back(std::move(log));
  }
  return result;
}

namespace {

constexpr const char* kCheckpointFormat = "sspnet-checkpoint/1";

nlohmann::json anchors_to_json(const AnchorSpec& spec) {
  nlohmann::json levels = nlohmann::json::array();
  for (const auto& level : spec.per_level) {
    nlohmann::json shapes = nlohmann::json::array();
    for (const AnchorShape& a : level) shapes.push_back({a.w, a.h});
    levels.push_back(shapes);
  }
  return {{"strides", spec.strides}, {"shapes", levels}};
}

AnchorSpec anchors_from_json(const nlohmann::json& j) {
  AnchorSpec spec;
  spec.strides = j.at("strides").get<std::vector<Index>>();
  for (const auto& level : j.at("shapes")) {
    std::vector<AnchorShape> shapes;
    for (const auto& a : level) shapes.push_back({a.at(0).get<double>(), a.at(1).get<double>()});
    spec.per_level.push_back(std::move(shapes));
  }
  return spec;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Detector& det, const ExperimentConfig& config, int epoch) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  nlohmann::json tensors = nlohmann::json::array();
  DetectorParams::visit(det.params, "", [&](const std::string& name, const Tensor& t) {
    const std::string file = name + ".sspt";
    save_sspt(t, dir / file);
    tensors.push_back({{"name", name}, {"file", file}, {"shape", t.shape()}});
  });
  nlohmann::json manifest{{"format", kCheckpointFormat}, {"epoch", epoch},        {"neck", neck_name(det.neck)},
                          {"config", config.to_json()},  {"anchors", anchors_to_json(det.anchors)}, {"tensors", tensors}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(1) << "\n";
  if (!out) throw IoError("failed writing " + (dir / "manifest.json").string());
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const fs::path file = dir / "manifest.json";
  std::ifstream in(file);
  if (!in) throw IoError("cannot open checkpoint manifest " + file.string());
  Checkpoint ck;
  std::map<std::string, std::pair<std::string, Shape>> entries;
  try {
    const nlohmann::json m = nlohmann::json::parse(in);
    if (m.at("format").get<std::string>() != kCheckpointFormat) throw IoError(file.string() + ": unsupported checkpoint format");
    ck.epoch = m.at("epoch").get<int>();
    ck.config = ExperimentConfig::from_json(m.at("config"));
    ck.config.neck = m.at("neck").get<std::string>();
    ck.detector = init_detector(ck.config, anchors_from_json(m.at("anchors")));
    for (const auto& t : m.at("tensors")) {
      entries[t.at("name").get<std::string>()] = {t.at("file").get<std::string>(), t.at("shape").get<Shape>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint manifest " + file.string() + ": " + e.what());
  } catch (const ArgumentError& e) {
    throw IoError("checkpoint " + file.string() + " describes an invalid model: " + e.what());
  }
  size_t used = 0;
  DetectorParams::visit(ck.detector.params, "", [&](const std::string& name, Tensor& t) {
    auto it = entries.find(name);
    if (it == entries.end()) throw IoError("checkpoint " + dir.string() + " lacks tensor " + name);
    Tensor loaded = load_sspt(dir / it->second.first);
    if (loaded.shape() != t.shape() || it->second.second != t.shape()) {
      throw IoError("checkpoint tensor " + name + " has shape " + shape_str(loaded.shape()) + ", model expects " +
                    shape_str(t.shape()));
    }
    t = std::move(loaded);
    ++used;
  });
  if (used != entries.size()) throw IoError("checkpoint " + dir.string() + " has tensors the model does not use");
  return ck;
}

}  // namespace sspnet
