#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "msst/checkpoint.hpp"
#include "msst/dataset.hpp"
#include "msst/graph.hpp"
#include "msst/modality.hpp"
#include "msst/model.hpp"
#include "msst/train.hpp"
#include "test_util.hpp"

using namespace msst;
using testutil::bitwise_equal;
using testutil::TempDir;

namespace {

TrainConfig reference_schedule() {
  TrainConfig cfg;
  cfg.epochs = 120;
  cfg.warmup_epochs = 5;
  cfg.lr_max = 0.1;
  cfg.lr_min = 0.0001;
  return cfg;
}

// Tiny two-class setup that trains in seconds: 3-joint chain, 8 frames.
struct ToySetup {
  GraphSpec graph = build_graph({-1, 0, 1}, "chain3");
  ModelConfig model;
  TrainConfig train;
  std::vector<SkeletonSequence> train_set, val_set;

  explicit ToySetup(std::uint64_t seed, index_t epochs, double lr,
                    double data_noise = 0.02) {
    model.layers = 9;
    model.base_channel = 4;
    model.heads = 1;
    model.num_classes = 2;
    model.frames = 8;
    model.in_channels = 3;
    model.noise_std = 0.0;

    train.epochs = epochs;
    train.warmup_epochs = std::max<index_t>(1, epochs / 10);
    train.batch_size = 4;
    train.lr_max = lr;
    train.lr_min = lr / 100.0;
    train.momentum = 0.9;
    train.weight_decay = 0.0004;
    train.seed = seed;

    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.per_class = 10;
    spec.joints = 3;
    spec.t_min = 8;
    spec.t_max = 8;
    spec.noise = data_noise;
    spec.seed = 500 + seed;
    ModalitySpec joint = parse_modality("joint", -1, graph);
    for (const auto& s : generate_synthetic(spec))
      train_set.push_back(prepare_sequence(s, joint, model.frames, graph));
    spec.seed = 900 + seed;
    spec.per_class = 5;
    for (const auto& s : generate_synthetic(spec))
      val_set.push_back(prepare_sequence(s, joint, model.frames, graph));
  }
};

} // namespace

TEST_CASE("learning rate warms up linearly then decays on a cosine") {
  const TrainConfig cfg = reference_schedule();

  CHECK(lr_at(0, cfg) == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(lr_at(4, cfg) == 0.1);   // warmup peak, reached exactly
  CHECK(lr_at(5, cfg) == 0.1);   // cosine starts at the same value
  CHECK(lr_at(62, cfg) == doctest::Approx(0.050050000000000004).epsilon(1e-15));
  CHECK(lr_at(119, cfg) == doctest::Approx(0.0001).epsilon(1e-12));

  // Monotone nonincreasing after warmup, always within [lr_min, lr_max].
  for (index_t e = cfg.warmup_epochs; e + 1 < cfg.epochs; ++e) {
    CHECK(lr_at(e + 1, cfg) <= lr_at(e, cfg));
    CHECK(lr_at(e, cfg) <= cfg.lr_max);
    CHECK(lr_at(e, cfg) >= cfg.lr_min);
  }

  CHECK_THROWS_AS(lr_at(-1, cfg), std::runtime_error);
  CHECK_THROWS_AS(lr_at(120, cfg), std::runtime_error);

  // A schedule with a single post-warmup epoch sits at the peak.
  TrainConfig brief = cfg;
  brief.epochs = 6;
  CHECK(lr_at(5, brief) == brief.lr_max);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());

  TrainConfig bad = cfg;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);
  bad = cfg;
  bad.warmup_epochs = 120;
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);
  bad = cfg;
  bad.warmup_epochs = 0;
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);
  bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);
  bad = cfg;
  bad.lr_min = 0.2;
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);
  bad = cfg;
  bad.lr_min = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);
  bad = cfg;
  bad.momentum = -0.1;
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);
  bad = cfg;
  bad.weight_decay = -1e-6;
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);
}

TEST_CASE("sgd reproduces the two-step quadratic trace") {
  // Minimise x^2/2 from x=1 with lr 0.1, momentum 0.9, no decay.
  ParameterStore params;
  params.create("x", {1}).values()[0] = 1.0;
  TrainConfig cfg;
  cfg.lr_max = 0.1;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0;
  SgdState state;

  params.get("x").grad().assign(1, params.get("x").values()[0]);
  sgd_step(params, state, cfg, 0.1);
  CHECK(params.get("x").values()[0] == 0.81);

  params.get("x").node()->zero_grad();
  params.get("x").grad().assign(1, params.get("x").values()[0]);
  sgd_step(params, state, cfg, 0.1);
  CHECK(params.get("x").values()[0] == 0.5751000000000001);
}

TEST_CASE("sgd without momentum or decay is a plain gradient step") {
  ParameterStore params;
  params.create("w", {2}).values() = {1.0, -2.0};
  params.get("w").grad() = {0.5, 0.25};
  TrainConfig cfg;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  SgdState state;
  sgd_step(params, state, cfg, 0.1);
  CHECK(params.get("w").values()[0] == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(params.get("w").values()[1] == doctest::Approx(-2.025).epsilon(1e-15));
}

TEST_CASE("weight decay skips norms and the fusion gate") {
  ParameterStore params;
  params.create("L1.s1.wo", {1}).values()[0] = 1.0;
  params.create("L1.s1.norm1.gain", {1}).values()[0] = 1.0;
  params.create("L1.s1.norm2.bias", {1}).values()[0] = 1.0;
  params.create("fuse.alpha", {1}).values()[0] = 1.0;
  TrainConfig cfg;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.01;
  SgdState state;
  // No gradients: only decay moves parameters.
  sgd_step(params, state, cfg, 1.0);
  CHECK(params.get("L1.s1.wo").values()[0] == doctest::Approx(0.99).epsilon(1e-15));
  CHECK(params.get("L1.s1.norm1.gain").values()[0] == 1.0);
  CHECK(params.get("L1.s1.norm2.bias").values()[0] == 1.0);
  CHECK(params.get("fuse.alpha").values()[0] == 1.0);
}

TEST_CASE("velocity accumulates per parameter") {
  ParameterStore params;
  params.create("w", {1}).values()[0] = 0.0;
  TrainConfig cfg;
  cfg.momentum = 0.5;
  cfg.weight_decay = 0.0;
  SgdState state;
  // Constant unit gradient: velocity 1, 1.5, 1.75, ...; Nesterov step uses
  // g + mu*v after the update.
  params.get("w").grad().assign(1, 1.0);
  sgd_step(params, state, cfg, 1.0);
  CHECK(params.get("w").values()[0] == doctest::Approx(-1.5).epsilon(1e-15));
  CHECK(state.velocity.at("w")[0] == doctest::Approx(1.0).epsilon(1e-15));
  params.get("w").node()->zero_grad();
  params.get("w").grad().assign(1, 1.0);
  sgd_step(params, state, cfg, 1.0);
  CHECK(state.velocity.at("w")[0] == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("the toy problem trains to high accuracy") {
  ToySetup setup(1, 30, 0.02);
  MsstModel model(setup.model, setup.graph, 1);
  TrainResult result =
      train_model(model, setup.train_set, setup.val_set, setup.train, "", nullptr);

  REQUIRE(result.history.size() == 30);
  double peak_train = 0.0;
  for (const auto& em : result.history) peak_train = std::max(peak_train, em.train_acc);
  CHECK(peak_train >= 0.99);
  CHECK(result.best_val_acc >= 0.8);
  CHECK(result.best_epoch >= 0);

  // Logged learning rates follow the schedule exactly.
  for (const auto& em : result.history)
    CHECK(em.lr == lr_at(em.epoch, setup.train));
}

TEST_CASE("training loss decreases over the first ten epochs (median of three seeds)") {
  std::vector<double> drops;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    ToySetup setup(seed, 10, 0.02);
    MsstModel model(setup.model, setup.graph, seed);
    TrainResult result =
        train_model(model, setup.train_set, setup.val_set, setup.train, "", nullptr);
    drops.push_back(result.history.front().train_loss -
                    result.history.back().train_loss);
  }
  std::sort(drops.begin(), drops.end());
  CHECK(drops[1] > 0.0);
}

TEST_CASE("identical seeds produce byte-identical metrics files") {
  ToySetup setup(2, 3, 0.02);
  TempDir tmp;
  {
    MsstModel model(setup.model, setup.graph, 2);
    train_model(model, setup.train_set, setup.val_set, setup.train,
                tmp.path() + "/a", nullptr);
  }
  {
    MsstModel model(setup.model, setup.graph, 2);
    train_model(model, setup.train_set, setup.val_set, setup.train,
                tmp.path() + "/b", nullptr);
  }
  const std::string a = testutil::read_file(tmp.path() + "/a/metrics.jsonl");
  const std::string b = testutil::read_file(tmp.path() + "/b/metrics.jsonl");
  CHECK(!a.empty());
  CHECK(a == b);

  // And the metrics lines parse as JSON with the expected fields.
  std::istringstream lines(a);
  std::string line;
  index_t count = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j["epoch"].get<index_t>() == count);
    CHECK(j.contains("lr"));
    CHECK(j.contains("train_loss"));
    CHECK(j.contains("train_acc"));
    const double va = j["val_acc"].get<double>();
    CHECK(va >= 0.0);
    CHECK(va <= 1.0);
    ++count;
  }
  CHECK(count == 3);
}

TEST_CASE("the best checkpoint reproduces the best validation accuracy") {
  ToySetup setup(3, 8, 0.02);
  TempDir tmp;
  MsstModel model(setup.model, setup.graph, 3);
  TrainResult result = train_model(model, setup.train_set, setup.val_set, setup.train,
                                   tmp.path(), nullptr);

  MsstModel best(setup.model, setup.graph, 777);
  load_checkpoint(tmp.file("best.ckpt"), best.params());
  EvalResult eval = evaluate(best, setup.val_set, setup.train.batch_size);
  CHECK(eval.accuracy == doctest::Approx(result.best_val_acc).epsilon(1e-12));

  // final.ckpt holds the end-of-training weights.
  MsstModel last(setup.model, setup.graph, 778);
  load_checkpoint(tmp.file("final.ckpt"), last.params());
  EvalResult final_eval = evaluate(last, setup.val_set, setup.train.batch_size);
  CHECK(final_eval.accuracy ==
        doctest::Approx(result.history.back().val_acc).epsilon(1e-12));
}

TEST_CASE("evaluation is independent of the batch split") {
  ToySetup setup(4, 3, 0.02);
  MsstModel model(setup.model, setup.graph, 4);

  EvalResult one = evaluate(model, setup.val_set, 1);
  EvalResult three = evaluate(model, setup.val_set, 3);
  EvalResult all = evaluate(model, setup.val_set, 64);
  CHECK(bitwise_equal(one.scores, three.scores));
  CHECK(bitwise_equal(one.scores, all.scores));
  CHECK(one.predictions == three.predictions);
  CHECK(one.predictions == all.predictions);

  // Score rows are softmax distributions and accuracy matches a recount.
  const index_t classes = setup.model.num_classes;
  index_t correct = 0;
  for (std::size_t i = 0; i < setup.val_set.size(); ++i) {
    double sum = 0.0;
    index_t best = 0;
    for (index_t j = 0; j < classes; ++j) {
      const double v = one.scores[i * static_cast<std::size_t>(classes) +
                                  static_cast<std::size_t>(j)];
      CHECK(v >= 0.0);
      sum += v;
      if (v > one.scores[i * static_cast<std::size_t>(classes) +
                         static_cast<std::size_t>(best)])
        best = j;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(one.predictions[i] == best);
    if (best == setup.val_set[i].label) ++correct;
  }
  CHECK(one.accuracy ==
        doctest::Approx(static_cast<double>(correct) /
                        static_cast<double>(setup.val_set.size())).epsilon(1e-12));
}

TEST_CASE("non-finite losses abort training with a diagnostic") {
  ToySetup setup(5, 3, 0.02);
  MsstModel model(setup.model, setup.graph, 5);
  model.params().get("fc.b").values()[0] = std::nan("");
  CHECK_THROWS_WITH_AS(train_model(model, setup.train_set, setup.val_set, setup.train,
                                   "", nullptr),
                       doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("training requires samples") {
  ToySetup setup(6, 3, 0.02);
  MsstModel model(setup.model, setup.graph, 6);
  CHECK_THROWS_AS(train_model(model, {}, setup.val_set, setup.train, "", nullptr),
                  std::runtime_error);
}

TEST_CASE("batch assembly preserves order and checks dimensions") {
  ToySetup setup(7, 3, 0.02);
  Tensor x = batch_tensor(setup.train_set, {3, 0});
  REQUIRE(x.shape() == shape_t{2, 8, 3, 3});
  CHECK(x.at({0, 0, 0, 0}) == setup.train_set[3].at(0, 0, 0));
  CHECK(x.at({1, 2, 1, 2}) == setup.train_set[0].at(2, 1, 2));
  CHECK(batch_labels(setup.train_set, {3, 0}) ==
        std::vector<index_t>{setup.train_set[3].label, setup.train_set[0].label});
  CHECK_THROWS_AS(batch_tensor(setup.train_set, {}), std::runtime_error);
}
