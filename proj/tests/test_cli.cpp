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

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const fs::path& work() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "sspnet_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run run(const std::string& args) {
  const fs::path out = work() / "stdout.txt", err = work() / "stderr.txt";
  const std::string cmd = "cd '" + work().string() + "' && '" SSPNET_CLI "' " + args + " > '" + out.string() + "' 2> '" +
                          err.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

// Concatenated bytes of every regular file under `dir`, in path order.
std::string tree(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const fs::path& f : files) all += fs::relative(f, dir).string() + "\n" + slurp(f);
  return all;
}

}  // namespace

TEST_CASE("usage and exit codes") {
  CHECK(run("").code == 1);
  const Run unknown = run("frobnicate");
  CHECK(unknown.code == 1);
  CHECK(unknown.err.find("usage: sspnet") != std::string::npos);
  CHECK(run("--help").code == 0);
  CHECK(run("gen-synth --help").code == 0);
  CHECK(run("gen-synth").code == 1);                                // missing --out
  CHECK(run("gen-synth --out g --optim.lr=-1").code == 1);          // validation
  CHECK(run("gen-synth --out g --no.such.key=1").code == 1);        // unknown key
  CHECK(run("gen-synth --out g --bogus-flag").code == 1);           // unknown option
  CHECK(run("gen-synth --out g --config missing.json").code == 2);  // io
  CHECK(run("anchors-kmeans --data nowhere").code == 2);
  CHECK(run("eval --checkpoint nowhere --data nowhere").code == 2);
  std::ofstream(work() / "bad.json") << "{ nope";
  CHECK(run("gen-synth --out g --config bad.json").code == 1);
}

TEST_CASE("gen-synth and anchors-kmeans") {
  REQUIRE(run("gen-synth --out d1 --seed 5 --count 8").code == 0);
  REQUIRE(run("gen-synth --out d2 --seed 5 --count 8").code == 0);
  REQUIRE(run("gen-synth --out d3 --seed 6 --count 8").code == 0);
  CHECK(tree(work() / "d1") == tree(work() / "d2"));
  CHECK(tree(work() / "d1") != tree(work() / "d3"));

  const Run k3 = run("anchors-kmeans --data d1 --k 3 --seed 1");
  REQUIRE(k3.code == 0);
  std::istringstream lines(k3.out);
  std::string line;
  int rows = 0;
  while (std::getline(lines, line)) rows += !line.empty() && std::isdigit(static_cast<unsigned char>(line[0]));
  CHECK(rows == 3);
  CHECK(run("anchors-kmeans --data d1 --k 3 --seed 1").out == k3.out);
  CHECK(run("anchors-kmeans --data d1 --k 0").code == 1);
}

TEST_CASE("config file and overrides layer in order") {
  REQUIRE(run("gen-synth --out base --seed 2 --count 2").code == 0);
  std::ofstream(work() / "c.json") << R"({"seed": 9, "data.image_size": 96})";
  REQUIRE(run("gen-synth --out viafile --config c.json --seed 2 --count 2").code == 0);
  const auto ann = nlohmann::json::parse(slurp(work() / "viafile" / "annotations.json"));
  CHECK(ann["images"][0]["width"] == 96);
  // --seed beats the file, so the draws match a run with only --seed 2 and the same size.
  REQUIRE(run("gen-synth --out direct --seed 2 --count 2 --data.image_size 96").code == 0);
  CHECK(tree(work() / "viafile") == tree(work() / "direct"));
}

TEST_CASE("train-toy, eval and their determinism") {
  REQUIRE(run("gen-synth --out tr --seed 3 --count 4").code == 0);
  const std::string common = "--data tr --seed 3 --optim.epochs=1 --model.stage_channels 6 --model.channels 4";
  REQUIRE(run("train-toy " + common + " --out ckb --neck baseline").code == 0);
  REQUIRE(run("train-toy " + common + " --out cks --neck sspnet").code == 0);
  REQUIRE(run("train-toy " + common + " --out cks2 --neck sspnet --log log.json").code == 0);
  CHECK(tree(work() / "cks") == tree(work() / "cks2"));
  CHECK(nlohmann::json::parse(slurp(work() / "log.json"))["loss_curve"].size() == 4);

  auto cfg = [](const char* dir) {
    auto m = nlohmann::json::parse(slurp(work() / dir / "manifest.json"));
    return m["config"];
  };
  auto b = cfg("ckb"), s = cfg("cks");
  CHECK(b["model.neck"] == "baseline");
  CHECK(s["model.neck"] == "sspnet");
  b.erase("model.neck");
  s.erase("model.neck");
  CHECK(b == s);

  const Run e1 = run("eval --checkpoint cks --data tr --out r1.json --detections d1.jsonl");
  const Run e2 = run("eval --checkpoint cks --data tr --out r2.json --detections d2.jsonl");
  REQUIRE(e1.code == 0);
  CHECK(e1.out == e2.out);
  CHECK(slurp(work() / "r1.json") == slurp(work() / "r2.json"));
  CHECK(slurp(work() / "d1.jsonl") == slurp(work() / "d2.jsonl"));
  std::istringstream dets(slurp(work() / "d1.jsonl"));
  std::string line;
  while (std::getline(dets, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("image_id"));
    CHECK(j["bbox"].size() == 4);
    CHECK(j["score"].get<double>() >= 0.0);
  }

  fs::create_directories(work() / "empty");
  std::ofstream(work() / "empty" / "annotations.json") << R"({"images": [], "annotations": []})";
  CHECK(run("eval --checkpoint cks --data empty").code == 0);

  // A checkpoint whose stored architecture disagrees with its tensors.
  fs::copy(work() / "cks", work() / "broken", fs::copy_options::recursive);
  auto m = nlohmann::json::parse(slurp(work() / "broken" / "manifest.json"));
  m["config"]["model.channels"] = 5;
  std::ofstream(work() / "broken" / "manifest.json") << m.dump();
  CHECK(run("eval --checkpoint broken --data tr").code == 2);
}

TEST_CASE("gradcheck and grad-consistency") {
  const Run g = run("gradcheck --seeds 2 --only sigmoid");
  CHECK(g.code == 0);
  CHECK(g.out.find("sigmoid") != std::string::npos);
  CHECK(run("gradcheck --seeds 2 --only sigmoid").out == g.out);
  CHECK(run("gradcheck --only no_such_check").code == 1);

  REQUIRE(run("gen-synth --out gc --seed 1 --count 2").code == 0);
  const Run a = run("grad-consistency --data gc --scenes 2 --out gc1.json");
  const Run b = run("grad-consistency --data gc --scenes 2 --out gc2.json");
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(slurp(work() / "gc1.json") == slurp(work() / "gc2.json"));
  const auto j = nlohmann::json::parse(slurp(work() / "gc1.json"));
  CHECK(j["controlled"]["max_residual"].get<double>() < 1e-9);
  CHECK(j.contains("conflict"));
}
