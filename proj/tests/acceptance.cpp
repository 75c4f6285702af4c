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

// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>

#include "grad_scenes.hpp"
#include "metrics_reference.hpp"
#include "test_util.hpp"
#include "sspnet/gradient_suite.hpp"
#include "sspnet/train.hpp"

using namespace sspnet;
using namespace sspnet::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... v) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, v...);
  return buf;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

// Every primitive and composite under finite differences: 100 seeds, eps 1e-5, max rel. error < 1e-4, < 60 s CPU.
Outcome gradient_suite() {
  const double t0 = cpu_seconds();
  GradSuiteOptions opt;
  opt.seeds = 100;
  opt.eps = 1e-5;
  const GradSuiteReport r = run_gradient_suite(opt);
  const double cpu = cpu_seconds() - t0;
  std::string worst_name;
  double worst = 0;
  for (const auto& e : r.entries)
    if (e.max_rel_error >= worst) worst = e.max_rel_error, worst_name = e.name;
  return {r.passed(1e-4) && cpu < 60.0,
          fmt("%zu checks, worst %.3e (%s), %.1f s CPU", r.entries.size(), worst, worst_name.c_str(), cpu)};
}

// |autograd - Σ ψ_k g_k| < 1e-9 at every aligned cell over 100 seeds; recovered ψ within 1e-9 of psi().
Outcome decomposition() {
  double worst = 0, worst_psi = 0;
  Index cells = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const ControlledScene scene = random_scene(seed, 3, 1);
    for (Index r = 0; r < 8; ++r)
      for (Index c = 0; c < 8; ++c) {
        const GradReport rep = verify_decomposition(scene, {r, c});
        worst = std::max(worst, rep.residual);
        for (int k = kFirstLevel; k <= kLastLevel; ++k) {
          const size_t i = static_cast<size_t>(k - kFirstLevel);
          Index ch = 0;
          rep.g[i].cwiseAbs().maxCoeff(&ch);
          const double recovered = rep.contribution[i][ch] / rep.g[i][ch];
          worst_psi = std::max(worst_psi, std::abs(recovered - psi(scene.attention, {r, c}, k)));
        }
        ++cells;
      }
  }
  return {worst < 1e-9 && worst_psi < 1e-9,
          fmt("%lld cells, max residual %.3e, max psi error %.3e", static_cast<long long>(cells), worst, worst_psi)};
}

// A ≡ 1 turns the SSM chain into the plain FPN merge (1e-12); a zero attention intersection
// cuts every shallow-level gradient into P'_5 to exactly 0.
Outcome fpn_reduction() {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    Tape tape;
    FeaturePyramid c;
    AttentionPyramid a;
    for (int k = kFirstLevel; k <= kLastLevel; ++k) {
      const Index side = Index{1} << (kLastLevel - k + 1);
      c.levels.push_back(tape.leaf(sspnet::testing::random_tensor({1, 3, side, side}, rng)));
      c.strides.push_back(Index{1} << k);
      a.maps.push_back(tape.constant(Tensor(Shape{1, 1, side, side}, 1.0)));
      a.strides.push_back(Index{1} << k);
    }
    const FeaturePyramid ssm = ssm_chain(c, a), fpn = fpn_merge_baseline(c);
    for (size_t l = 0; l < ssm.size(); ++l) worst = std::max(worst, max_abs_diff(ssm.levels[l].value(), fpn.levels[l].value()));
  }
  double leaked = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    ControlledScene scene = random_scene(seed, 3, 1);
    const int cut = 3 + static_cast<int>(seed % 2);  // zero A_3 or A_4
    scene.attention[static_cast<size_t>(cut - kFirstLevel)] = Tensor(scene.attention[static_cast<size_t>(cut - kFirstLevel)].shape());
    for (Index r = 0; r < 8; ++r)
      for (Index col = 0; col < 8; ++col) {
        const GradReport rep = verify_decomposition(scene, {r, col});
        for (int k = kFirstLevel; k <= cut; ++k) leaked = std::max(leaked, rep.contribution[static_cast<size_t>(k - 2)].cwiseAbs().maxCoeff());
      }
  }
  return {worst < 1e-12 && leaked == 0.0, fmt("A=1 max diff %.3e, gradient through a zero gate %.3e", worst, leaked)};
}

// Single positive at level 2. Without gates the level gradients disagree in sign at every cell.
// With gates, each gated level's conflicting mass is exactly ψ_k < 1 times its ungated mass,
// so the total shrinks strictly; level 5 is the direct path and keeps ψ_5 = 1.
Outcome conflict_suppression() {
  Index cells = 0, conflicts = 0, reduced = 0;
  double worst_ratio = 0, worst_scale = 0;
  const std::vector<double> labels{1, 0, 0, 0};
  auto only = [](const GradReport& rep, bool gated, int keep) {
    std::vector<Eigen::VectorXd> v;
    for (int k = kFirstLevel; k <= kLastLevel; ++k) {
      const size_t i = static_cast<size_t>(k - kFirstLevel);
      const Eigen::VectorXd& x = gated ? rep.contribution[i] : rep.g[i];
      v.push_back(k == kFirstLevel || keep == 0 || k == keep ? x : Eigen::VectorXd::Zero(x.size()));
    }
    return v;
  };
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng = Rng::for_stage(seed, "acceptance/conflict");
    ControlledScene gated = random_scene(seed, 4, 1);
    gated.probes = shared_probes(rng, 4, 2);
    ControlledScene plain = gated;
    plain.attention = constant_attention(1, {1, 1, 1, 1});
    for (Index r = 0; r < 8; ++r)
      for (Index c = 0; c < 8; ++c) {
        ++cells;
        conflicts += verify_decomposition(plain, {r, c}).sign_conflict;
        const GradReport rep = verify_decomposition(gated, {r, c});
        const double m_plain = conflict_mass(only(rep, false, 0), labels);
        const double m_gated = conflict_mass(only(rep, true, 0), labels);
        bool ok = m_plain > 0 && m_gated < m_plain;
        for (int k = kFirstLevel + 1; k < kLastLevel; ++k) {
          const double psi_k = rep.psi_at(k);
          const double before = conflict_mass(only(rep, false, k), labels);
          const double after = conflict_mass(only(rep, true, k), labels);
          ok = ok && psi_k < 1 && before > 0;
          worst_scale = std::max(worst_scale, std::abs(after - psi_k * before) / before);
        }
        reduced += ok;
        if (m_plain > 0) worst_ratio = std::max(worst_ratio, m_gated / m_plain);
      }
  }
  return {conflicts == cells && reduced == cells && worst_scale < 1e-9,
          fmt("baseline conflict at %lld/%lld cells, gated mass reduced at %lld/%lld (worst ratio %.4f), "
              "per-level mass = psi_k x ungated to %.1e",
              static_cast<long long>(conflicts), static_cast<long long>(cells), static_cast<long long>(reduced),
              static_cast<long long>(cells), worst_ratio, worst_scale)};
}

// dice ∈ [0,1), dice(A,A) = 0 for clipped binary A, OHEM keeps exactly 1:3, α/β defaults come from the config.
Outcome loss_properties() {
  bool range = true, self_zero = true, ratio = true;
  Rng rng(21);
  for (int trial = 0; trial < 500; ++trial) {
    const Index side = 2 + static_cast<Index>(rng.below(12));
    Tensor a({1, 1, side, side}), s({1, 1, side, side});
    for (Index i = 0; i < a.numel(); ++i) {
      a[i] = rng.uniform(kProbabilityClip, 1 - kProbabilityClip);
      s[i] = rng.uniform() < 0.2 ? 1.0 : 0.0;
    }
    Tape tape;
    const double d = dice_loss(tape.constant(a), s).value().item();
    range = range && d >= 0 && d < 1;
    Tensor bin(a.shape());
    for (Index i = 0; i < bin.numel(); ++i) bin[i] = s[i] > 0 ? 1 - kProbabilityClip : kProbabilityClip;
    self_zero = self_zero && dice_loss(tape.constant(bin), bin).value().item() == 0.0;

    Index pos = 0;
    for (Index i = 0; i < s.numel(); ++i) pos += s[i] > 0;
    if (pos > 0 && s.numel() - pos >= 3 * pos) {
      Tensor cell(s.shape());
      for (Index i = 0; i < cell.numel(); ++i) cell[i] = rng.uniform();
      const OhemSelection sel = select_ohem(cell, s);
      ratio = ratio && static_cast<Index>(sel.positives.size()) == pos &&
              static_cast<Index>(sel.negatives.size()) == 3 * pos;
    }
  }
  const ExperimentConfig c = ExperimentConfig::from_json(nlohmann::json::object());
  const bool defaults = c.loss.alpha == 0.01 && c.loss.beta == 1.0;
  return {range && self_zero && ratio && defaults,
          fmt("range %s, dice(A,A)=0 %s, OHEM 1:3 %s, config alpha=%g beta=%g", range ? "ok" : "BAD",
              self_zero ? "ok" : "BAD", ratio ? "ok" : "BAD", c.loss.alpha, c.loss.beta)};
}

// Σs = 1 ± 1e-12, λ = 1 ignores IoF exactly, first-draw frequencies within 0.01 over 1e5 draws, λ default 0.6.
Outcome wns() {
  Rng rng(5);
  double worst_sum = 0;
  bool iof_blind = true;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Candidate> cands(1 + rng.below(40));
    for (Candidate& c : cands) c = {rng.uniform(), rng.uniform()};
    const auto s = wns_scores(cands, rng.uniform());
    double sum = 0;
    for (double v : s) sum += v;
    worst_sum = std::max(worst_sum, std::abs(sum - 1));
    auto shuffled = cands;
    for (Candidate& c : shuffled) c.max_iof = rng.uniform();
    iof_blind = iof_blind && wns_scores(cands, 1.0) == wns_scores(shuffled, 1.0);
  }
  const std::vector<Candidate> cands{{0.9, 0.1}, {0.2, 0.8}, {0.5, 0.5}, {0.05, 0.0}, {0.7, 0.9}};
  const auto s = wns_scores(cands, 0.6);
  std::vector<double> hits(s.size(), 0);
  const int draws = 100000;
  for (int d = 0; d < draws; ++d) hits[static_cast<size_t>(wns_sample(s, 1, static_cast<std::uint64_t>(d))[0])] += 1;
  double worst_freq = 0;
  for (size_t i = 0; i < s.size(); ++i) worst_freq = std::max(worst_freq, std::abs(hits[i] / draws - s[i]));
  const double lambda = ExperimentConfig{}.wns_lambda;
  return {worst_sum <= 1e-12 && iof_blind && worst_freq < 0.01 && lambda == 0.6,
          fmt("max |sum-1| %.2e, lambda=1 IoF-blind %s, max freq error %.4f, default lambda %g", worst_sum,
              iof_blind ? "yes" : "NO", worst_freq, lambda)};
}

// Objective non-increasing per iteration; on three clusters k-means beats the geometric ladder.
Outcome anchors() {
  bool monotone = true;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    std::vector<GtBox> boxes;
    for (int i = 0; i < 80; ++i) {
      const double w = rng.uniform(2, 40);
      boxes.push_back({{0, 0, w, w * rng.uniform(0.5, 2.0)}});
    }
    const KMeansResult r = kmeans_anchors(boxes, 1 + static_cast<int>(seed % 6), seed);
    for (size_t i = 1; i < r.objective.size(); ++i) monotone = monotone && r.objective[i] <= r.objective[i - 1];
  }
  Rng rng(11);
  std::vector<GtBox> boxes;
  const AnchorShape modes[] = {{3, 9}, {10, 10}, {22, 8}};
  for (const AnchorShape& m : modes)
    for (int i = 0; i < 40; ++i) boxes.push_back({{0, 0, m.w * rng.uniform(0.9, 1.1), m.h * rng.uniform(0.9, 1.1)}});
  const KMeansResult km = kmeans_anchors(boxes, 3, 5);
  std::vector<AnchorShape> ladder;
  for (const auto& l : geometric_ladder().per_level) ladder.insert(ladder.end(), l.begin(), l.end());
  const double ours = mean_best_iou(boxes, km.centroids), theirs = mean_best_iou(boxes, ladder);
  return {monotone && ours > theirs,
          fmt("objective monotone %s, mean best IoU %.4f vs ladder %.4f", monotone ? "yes" : "NO", ours, theirs)};
}

// AP/MR on random instances with at most 6 boxes equal the brute-force reference; golden report stable.
Outcome metrics_oracle() {
  Index mismatches = 0, instances = 0;
  for (std::uint64_t seed = 0; seed < 5000; ++seed) {
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
    const MatchResult m = match_detections(dets, gts, thr);
    const auto ref = reference_match(dets, gts, thr);
    ++instances;
    bool ok = m.det_flags == ref;
    if (ok && m.n_gt > 0) {
      const Index tp = std::count(ref.begin(), ref.end(), F::TruePositive);
      ok = std::abs(*average_precision(m.det_flags, m.n_gt) - reference_ap(ref, m.n_gt)) <= 1e-12 &&
           *miss_rate(m.det_flags, m.n_gt) == 1.0 - static_cast<double>(tp) / static_cast<double>(m.n_gt);
    }
    mismatches += !ok;
  }

  auto [dets, gts] = golden_instance();
  const nlohmann::json mine = evaluate(dets, gts).to_json();
  std::ifstream in(SSPNET_TEST_DATA "/golden_report.json");
  bool golden_ok = in.good();
  if (golden_ok) {
    const nlohmann::json golden = nlohmann::json::parse(in);
    golden_ok = golden.size() == mine.size();
    for (size_t i = 0; golden_ok && i < golden.size(); ++i) {
      golden_ok = golden[i]["partition"] == mine[i]["partition"] && golden[i]["iou"] == mine[i]["iou"] &&
                  golden[i]["n_gt"] == mine[i]["n_gt"];
      for (const char* key : {"ap", "mr"}) {
        if (!golden_ok) break;
        golden_ok = golden[i][key].is_null() == mine[i][key].is_null() &&
                    (golden[i][key].is_null() || std::abs(golden[i][key].get<double>() - mine[i][key].get<double>()) <= 1e-12);
      }
    }
  }
  const bool stable = evaluate(dets, gts).to_json() == mine;
  return {mismatches == 0 && golden_ok && stable,
          fmt("%lld/%lld random instances match, golden %s, repeat %s", static_cast<long long>(instances - mismatches),
              static_cast<long long>(instances), golden_ok ? "matches" : "DIFFERS", stable ? "identical" : "DIFFERS")};
}

// Fixed seeds, 20 synthetic images, 5 epochs: sspnet AP^tiny_50 >= baseline on held-out data in >= 4 of 5 seeds.
Outcome directional(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  int wins = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ExperimentConfig c = ExperimentConfig::load(SSPNET_CONFIGS "/toy.json");
    c.seed = seed;
    const Dataset train = gen_synthetic(c, work / ("train" + std::to_string(seed)), c.num_images, "train");
    const Dataset held = gen_synthetic(c, work / ("held" + std::to_string(seed)), c.num_images, "heldout");
    double ap[2] = {0, 0};
    for (int arm = 0; arm < 2; ++arm) {
      c.neck = arm == 0 ? "baseline" : "sspnet";
      const TrainResult r = train_toy(c, train);
      const MetricCell* cell = evaluate_detector(r.detector, held, c).find(0.5, ScalePartition::Tiny);
      ap[arm] = cell && cell->ap ? *cell->ap : 0.0;
    }
    wins += ap[1] >= ap[0];
    per_seed += fmt(" [%llu: %.4f vs %.4f]", static_cast<unsigned long long>(seed), ap[1], ap[0]);
  }
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  return {wins >= 4 && minutes < 10.0,
          fmt("sspnet >= baseline in %d/5 seeds, %.2f min;", wins, minutes) + per_seed};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string tree(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const fs::path& f : files) all += fs::relative(f, dir).string() + "\n" + slurp(f);
  return all;
}

// Every CLI subcommand, run twice with the same config and seed, gives identical output files and stdout.
Outcome determinism(const fs::path& work) {
  auto run = [&](const std::string& args, const std::string& tag) {
    const fs::path out = work / (tag + ".stdout");
    const std::string cmd = "cd '" + work.string() + "' && '" SSPNET_CLI "' " + args + " > '" + out.string() + "' 2>/dev/null";
    const int status = std::system(cmd.c_str());
    return std::make_pair(WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out));
  };
  const std::string cfg = "--config '" SSPNET_CONFIGS "/toy.json' --seed 7";
  struct Step {
    std::string name, args, artefact;
  };
  const std::vector<Step> steps{
      {"gen-synth", "gen-synth " + cfg + " --out data@", "data@"},
      {"anchors-kmeans", "anchors-kmeans " + cfg + " --data data1 --k 3 --out anchors@.json", "anchors@.json"},
      {"train-toy", "train-toy " + cfg + " --data data1 --out ck@ --optim.epochs=2 --log log@.json", "ck@"},
      {"eval", "eval " + cfg + " --checkpoint ck1 --data data1 --out report@.json --detections dets@.jsonl", "report@.json"},
      {"gradcheck", "gradcheck " + cfg + " --seeds 3", ""},
      {"grad-consistency", "grad-consistency " + cfg + " --data data1 --checkpoint ck1 --scenes 3 --out gc@.json", "gc@.json"},
  };
  std::string detail;
  bool all = true;
  for (const Step& s : steps) {
    std::string outputs[2];
    int codes[2];
    for (int rep = 1; rep <= 2; ++rep) {
      auto subst = [&](std::string text) {
        for (size_t p; (p = text.find('@')) != std::string::npos;) text.replace(p, 1, std::to_string(rep));
        return text;
      };
      const auto [code, out] = run(subst(s.args), s.name + std::to_string(rep));
      codes[rep - 1] = code;
      std::string artefact;
      if (!s.artefact.empty()) {
        const fs::path p = work / subst(s.artefact);
        artefact = fs::is_directory(p) ? tree(p) : slurp(p);
      }
      if (s.name == "eval") artefact += slurp(work / subst("dets@.jsonl"));
      if (s.name == "train-toy") artefact += slurp(work / subst("log@.json"));
      // Output paths differ between the two runs; strip them from stdout before comparing.
      std::string text = out;
      for (const std::string& dir : {subst("data@"), subst("ck@")})
        for (size_t p; (p = text.find(dir)) != std::string::npos;) text.erase(p, dir.size());
      outputs[rep - 1] = text + "\n--\n" + artefact;
    }
    const bool same = codes[0] == 0 && codes[1] == 0 && outputs[0] == outputs[1] && !outputs[0].empty();
    all = all && same;
    detail += " " + s.name + (same ? " ok" : " DIFFERS");
  }
  return {all, "identical reruns:" + detail};
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "sspnet_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient-suite", gradient_suite},
      {"psi-decomposition", decomposition},
      {"fpn-reduction", fpn_reduction},
      {"conflict-suppression", conflict_suppression},
      {"loss-properties", loss_properties},
      {"wns", wns},
      {"anchors", anchors},
      {"metrics-oracle", metrics_oracle},
      {"directional-end-to-end", [&] { return directional(work / "e2e"); }},
      {"determinism", [&] { return determinism(work); }},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %-24s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  fs::remove_all(work);
  return failed == 0 ? 0 : 1;
}
