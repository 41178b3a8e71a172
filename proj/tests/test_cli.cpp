#include <doctest.h>

#include <string>
#include <vector>

#include <json.hpp>

#include "msst/cli.hpp"
#include "msst/dataset.hpp"
#include "msst/ensemble.hpp"
#include "msst/graph.hpp"
#include "test_util.hpp"

using namespace msst;
using testutil::TempDir;

namespace {

int cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("msst");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

// Shared fixture: a tiny graph, config and dataset for end-to-end runs.
struct CliSetup {
  TempDir tmp;
  std::string graph_path, config_path, data_path;

  CliSetup() {
    graph_path = tmp.file("chain3.json");
    save_graph(graph_path, build_graph({-1, 0, 1}, "chain3"));

    config_path = tmp.file("config.json");
    testutil::write_file(config_path,
                         "{\"layers\": 3, \"base_channel\": 4, \"heads\": 1,\n"
                         " \"num_classes\": 2, \"frames\": 8, \"in_channels\": 3,\n"
                         " \"noise_std\": 0.0, \"epochs\": 2, \"warmup_epochs\": 1,\n"
                         " \"batch_size\": 4, \"lr_max\": 0.01, \"lr_min\": 0.001,\n"
                         " \"momentum\": 0.9, \"weight_decay\": 0.0004}\n");

    data_path = tmp.file("data.jsonl");
    REQUIRE(cli({"synth", "--out", data_path, "--classes", "2", "--per-class", "4",
                 "--joints", "3", "--t-min", "8", "--t-max", "8", "--noise", "0.02",
                 "--seed", "5"}) == 0);
  }
};

} // namespace

TEST_CASE("usage errors exit with code 2") {
  CHECK(cli({}) == 2);
  CHECK(cli({"unknown-command"}) == 2);
  CHECK(cli({"synth"}) == 2);                       // missing required --out
  CHECK(cli({"synth", "--bogus", "x"}) == 2);
  CHECK(cli({"train", "--config", "c.json"}) == 2); // missing required flags
  CHECK(cli({"ensemble"}) == 2);                    // needs at least one file
  CHECK(cli({"ensemble", "a.json", "--expect", "5s"}) == 2);
  CHECK(cli({"train", "--config", "c", "--data", "d", "--graph", "g",
             "--modality", "velocity", "--out", "o"}) == 2);
}

TEST_CASE("synth writes a loadable dataset with a manifest") {
  TempDir tmp;
  const std::string out = tmp.file("synth.jsonl");
  REQUIRE(cli({"synth", "--out", out, "--classes", "2", "--per-class", "3",
               "--joints", "4", "--t-min", "6", "--t-max", "6", "--noise", "0",
               "--seed", "5"}) == 0);
  const auto samples = load_dataset(out);
  REQUIRE(samples.size() == 6);
  CHECK(samples[0].joints == 4);
  CHECK(samples[0].frames == 6);

  const auto manifest =
      nlohmann::json::parse(testutil::read_file(out + ".manifest.json"));
  CHECK(manifest["command"] == "synth");
  CHECK(manifest["seed"] == 5);
  CHECK(manifest.contains("config_hash"));
  CHECK(manifest.contains("version"));

  // The same invocation reproduces the dataset byte for byte.
  const std::string again = tmp.file("again.jsonl");
  REQUIRE(cli({"synth", "--out", again, "--classes", "2", "--per-class", "3",
               "--joints", "4", "--t-min", "6", "--t-max", "6", "--noise", "0",
               "--seed", "5"}) == 0);
  CHECK(testutil::read_file(out) == testutil::read_file(again));
}

TEST_CASE("train, eval, trace and ensemble run end to end") {
  CliSetup s;
  const std::string run = s.tmp.file("run");
  REQUIRE(cli({"train", "--config", s.config_path, "--data", s.data_path,
               "--graph", s.graph_path, "--modality", "joint", "--seed", "1",
               "--out", run}) == 0);

  // Training artifacts: metrics, checkpoints, scores and the manifest.
  CHECK(!testutil::read_file(run + "/metrics.jsonl").empty());
  CHECK(!testutil::read_file(run + "/best.ckpt").empty());
  CHECK(!testutil::read_file(run + "/final.ckpt").empty());
  const StreamScores trained = load_scores(run + "/scores.json");
  CHECK(trained.tag == "J");
  CHECK(trained.ids.size() == 8);
  const auto manifest =
      nlohmann::json::parse(testutil::read_file(run + "/manifest.json"));
  CHECK(manifest["command"] == "train");
  CHECK(manifest["seed"] == 1);

  // Evaluating the final checkpoint reproduces the stored scores up to the
  // float32 storage rounding.
  const std::string escore = s.tmp.file("eval.json");
  REQUIRE(cli({"eval", "--config", s.config_path, "--data", s.data_path,
               "--graph", s.graph_path, "--modality", "joint", "--ckpt",
               run + "/final.ckpt", "--out", escore}) == 0);
  const StreamScores evaluated = load_scores(escore);
  CHECK(evaluated.tag == "J");
  CHECK(testutil::max_abs_diff(evaluated.scores, trained.scores) < 1e-3);
  CHECK(evaluated.labels == trained.labels);

  // Attention maps: layers...x heads x {spatial, temporal}, spatial maps are
  // joints x joints and temporal maps frames x frames.
  const std::string maps = s.tmp.file("maps.json");
  REQUIRE(cli({"trace", "--config", s.config_path, "--data", s.data_path,
               "--graph", s.graph_path, "--modality", "joint", "--ckpt",
               run + "/final.ckpt", "--out", maps}) == 0);
  const auto trace = nlohmann::json::parse(testutil::read_file(maps));
  REQUIRE(trace.is_array());
  CHECK(trace.size() == 6); // 3 layers x 1 head x 2 kinds
  int spatial = 0, temporal = 0;
  for (const auto& entry : trace) {
    const std::size_t len = entry["map"].size();
    if (entry["kind"] == "spatial") {
      ++spatial;
      CHECK(len == 3);
    } else {
      ++temporal;
      CHECK(len == 8);
    }
    for (const auto& row : entry["map"]) {
      double sum = 0.0;
      for (const auto& v : row) sum += v.get<double>();
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  CHECK(spatial == 3);
  CHECK(temporal == 3);

  // A 4-stream ensemble over per-modality scores.
  std::vector<std::string> files;
  for (const std::string modality : {"bone", "joint-motion", "bone-motion"}) {
    const std::string dir = s.tmp.file("run-" + modality);
    REQUIRE(cli({"train", "--config", s.config_path, "--data", s.data_path,
                 "--graph", s.graph_path, "--modality", modality, "--seed", "1",
                 "--out", dir}) == 0);
    files.push_back(dir + "/scores.json");
  }
  const std::string fused = s.tmp.file("fused.json");
  CHECK(cli({"ensemble", run + "/scores.json", files[0], files[1], files[2],
             "--expect", "4s", "--out", fused}) == 0);
  const auto result = nlohmann::json::parse(testutil::read_file(fused));
  CHECK(result["accuracy"].get<double>() >= 0.0);
  CHECK(result["predictions"].size() == 8);

  // The wrong stream set fails the --expect assertion at runtime.
  CHECK(cli({"ensemble", run + "/scores.json", files[0], "--expect", "4s"}) == 1);
}

TEST_CASE("runtime failures exit with code 1") {
  CliSetup s;
  CHECK(cli({"train", "--config", s.tmp.file("absent.json"), "--data", s.data_path,
             "--graph", s.graph_path, "--modality", "joint", "--out",
             s.tmp.file("x")}) == 1);
  CHECK(cli({"train", "--config", s.config_path, "--data", s.data_path,
             "--graph", s.tmp.file("absent-graph.json"), "--modality", "joint",
             "--out", s.tmp.file("x")}) == 1);
  CHECK(cli({"eval", "--config", s.config_path, "--data", s.data_path,
             "--graph", s.graph_path, "--modality", "joint", "--ckpt",
             s.tmp.file("absent.ckpt")}) == 1);

  // Config keys that belong elsewhere are rejected.
  const std::string bad = s.tmp.file("bad.json");
  testutil::write_file(bad, "{\"seed\": 3}");
  CHECK(cli({"train", "--config", bad, "--data", s.data_path, "--graph",
             s.graph_path, "--modality", "joint", "--out", s.tmp.file("y")}) == 1);
  testutil::write_file(bad, "{\"joints\": 3}");
  CHECK(cli({"train", "--config", bad, "--data", s.data_path, "--graph",
             s.graph_path, "--modality", "joint", "--out", s.tmp.file("z")}) == 1);
  testutil::write_file(bad, "{\"lr_speed\": 3}");
  CHECK(cli({"train", "--config", bad, "--data", s.data_path, "--graph",
             s.graph_path, "--modality", "joint", "--out", s.tmp.file("w")}) == 1);

  // Labels outside the configured class count are caught on load.
  const std::string wide = s.tmp.file("wide.jsonl");
  REQUIRE(cli({"synth", "--out", wide, "--classes", "3", "--per-class", "2",
               "--joints", "3", "--t-min", "8", "--t-max", "8"}) == 0);
  CHECK(cli({"train", "--config", s.config_path, "--data", wide, "--graph",
             s.graph_path, "--modality", "joint", "--out", s.tmp.file("v")}) == 1);
}

TEST_CASE("the bone power override flows through the tags") {
  CliSetup s;
  const std::string run = s.tmp.file("j2");
  REQUIRE(cli({"train", "--config", s.config_path, "--data", s.data_path,
               "--graph", s.graph_path, "--modality", "joint", "--k", "2",
               "--seed", "1", "--out", run}) == 0);
  CHECK(load_scores(run + "/scores.json").tag == "J2");

  // Out-of-range powers fail at runtime (chain3 nilpotency is 3).
  CHECK(cli({"train", "--config", s.config_path, "--data", s.data_path,
             "--graph", s.graph_path, "--modality", "joint", "--k", "9",
             "--seed", "1", "--out", s.tmp.file("bad-k")}) == 1);
}
