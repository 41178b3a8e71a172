#include <doctest.h>

#include <string>
#include <vector>

#include "msst/ensemble.hpp"
#include "test_util.hpp"

using namespace msst;
using testutil::TempDir;

namespace {

StreamScores make_scores(std::string tag, index_t classes,
                         std::vector<index_t> labels, std::vector<double> scores) {
  StreamScores s;
  s.tag = std::move(tag);
  s.classes = classes;
  for (index_t i = 0; i < static_cast<index_t>(labels.size()); ++i) s.ids.push_back(i);
  s.labels = std::move(labels);
  s.scores = std::move(scores);
  return s;
}

// Random row-stochastic scores for `n` samples.
StreamScores random_scores(Rng& rng, std::string tag, index_t classes, index_t n) {
  std::vector<index_t> labels;
  std::vector<double> scores;
  for (index_t i = 0; i < n; ++i) {
    labels.push_back(rng.randint(classes));
    std::vector<double> row;
    double sum = 0.0;
    for (index_t j = 0; j < classes; ++j) {
      row.push_back(0.05 + rng.uniform());
      sum += row.back();
    }
    for (double v : row) scores.push_back(v / sum);
  }
  return make_scores(std::move(tag), classes, std::move(labels), std::move(scores));
}

} // namespace

TEST_CASE("score files round trip") {
  TempDir tmp;
  StreamScores s = make_scores("JM", 2, {0, 1, 1},
                               {0.25, 0.75, 0.5, 0.5, 0.125, 0.875});
  s.ids = {4, 7, 9};
  save_scores(tmp.file("s.json"), s);
  StreamScores back = load_scores(tmp.file("s.json"));
  CHECK(back.tag == "JM");
  CHECK(back.classes == 2);
  CHECK(back.ids == s.ids);
  CHECK(back.labels == s.labels);
  CHECK(back.scores == s.scores);
  CHECK(back.path == tmp.file("s.json"));
}

TEST_CASE("summing two streams follows the worked example") {
  // Rows 0.6/0.4 and 0.3/0.7: the sum 0.9/1.1 picks class 1.
  StreamScores a = make_scores("J", 2, {1}, {0.6, 0.4});
  StreamScores b = make_scores("B", 2, {1}, {0.3, 0.7});
  EnsembleResult r = ensemble({a, b});
  CHECK(r.predictions == std::vector<index_t>{1});
  CHECK(r.accuracy == 1.0);
}

TEST_CASE("a single stream reduces to its own argmax accuracy") {
  Rng rng(91);
  StreamScores s = random_scores(rng, "J", 4, 25);
  EnsembleResult r = ensemble({s});
  index_t correct = 0;
  for (index_t i = 0; i < 25; ++i) {
    index_t best = 0;
    for (index_t j = 1; j < 4; ++j)
      if (s.scores[static_cast<std::size_t>(i * 4 + j)] >
          s.scores[static_cast<std::size_t>(i * 4 + best)])
        best = j;
    CHECK(r.predictions[static_cast<std::size_t>(i)] == best);
    if (best == s.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  CHECK(r.accuracy ==
        doctest::Approx(static_cast<double>(correct) / 25.0).epsilon(1e-12));
}

TEST_CASE("duplicated streams do not change the prediction") {
  Rng rng(92);
  StreamScores s = random_scores(rng, "J", 3, 20);
  StreamScores twin = s;
  twin.tag = "B";
  EnsembleResult one = ensemble({s});
  EnsembleResult two = ensemble({s, twin});
  CHECK(one.predictions == two.predictions);
  CHECK(one.accuracy == two.accuracy);
}

TEST_CASE("ensembling is independent of argument order") {
  Rng rng(93);
  StreamScores a = random_scores(rng, "J", 5, 30);
  StreamScores b = random_scores(rng, "B", 5, 30);
  StreamScores c = random_scores(rng, "JM", 5, 30);
  b.labels = a.labels;
  c.labels = a.labels;

  EnsembleResult abc = ensemble({a, b, c});
  EnsembleResult cab = ensemble({c, a, b});
  EnsembleResult bca = ensemble({b, c, a});
  CHECK(abc.predictions == cab.predictions);
  CHECK(abc.predictions == bca.predictions);
  CHECK(abc.accuracy == cab.accuracy);
  CHECK(abc.accuracy == bca.accuracy);
}

TEST_CASE("mismatched streams are rejected with both files named") {
  StreamScores a = make_scores("J", 2, {0}, {0.5, 0.5});
  a.path = "first.json";
  StreamScores b = make_scores("B", 2, {0}, {0.5, 0.5});
  b.ids = {3};
  b.path = "second.json";
  CHECK_THROWS_WITH_AS(ensemble({a, b}), doctest::Contains("first.json"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(ensemble({a, b}), doctest::Contains("second.json"),
                       std::runtime_error);

  StreamScores c = make_scores("B", 3, {0}, {0.3, 0.3, 0.4});
  CHECK_THROWS_AS(ensemble({a, c}), std::runtime_error);

  StreamScores d = make_scores("B", 2, {1}, {0.5, 0.5});
  CHECK_THROWS_AS(ensemble({a, d}), std::runtime_error);

  CHECK_THROWS_AS(ensemble({}), std::runtime_error);
}

TEST_CASE("score files are validated on load") {
  TempDir tmp;

  testutil::write_file(tmp.file("rowsum.json"),
                       "{\"tag\":\"J\",\"classes\":2,\"ids\":[0],\"labels\":[0],"
                       "\"scores\":[[0.5,0.4]]}");
  CHECK_THROWS_WITH_AS(load_scores(tmp.file("rowsum.json")),
                       doctest::Contains("sums to"), std::runtime_error);

  testutil::write_file(tmp.file("missing.json"),
                       "{\"tag\":\"J\",\"classes\":2,\"ids\":[0],"
                       "\"scores\":[[0.5,0.5]]}");
  CHECK_THROWS_WITH_AS(load_scores(tmp.file("missing.json")),
                       doctest::Contains("labels"), std::runtime_error);

  testutil::write_file(tmp.file("width.json"),
                       "{\"tag\":\"J\",\"classes\":3,\"ids\":[0],\"labels\":[0],"
                       "\"scores\":[[0.5,0.5]]}");
  CHECK_THROWS_AS(load_scores(tmp.file("width.json")), std::runtime_error);

  testutil::write_file(tmp.file("classes.json"),
                       "{\"tag\":\"J\",\"classes\":1,\"ids\":[0],\"labels\":[0],"
                       "\"scores\":[[1.0]]}");
  CHECK_THROWS_AS(load_scores(tmp.file("classes.json")), std::runtime_error);

  testutil::write_file(tmp.file("shortrows.json"),
                       "{\"tag\":\"J\",\"classes\":2,\"ids\":[0,1],\"labels\":[0,1],"
                       "\"scores\":[[0.5,0.5]]}");
  CHECK_THROWS_AS(load_scores(tmp.file("shortrows.json")), std::runtime_error);

  testutil::write_file(tmp.file("garbage.json"), "not json");
  CHECK_THROWS_AS(load_scores(tmp.file("garbage.json")), std::runtime_error);

  CHECK_THROWS_AS(load_scores(tmp.file("absent.json")), std::runtime_error);
}

TEST_CASE("near-unit row sums inside the tolerance are accepted") {
  TempDir tmp;
  testutil::write_file(tmp.file("close.json"),
                       "{\"tag\":\"J\",\"classes\":2,\"ids\":[0],\"labels\":[0],"
                       "\"scores\":[[0.4999999997,0.5]]}");
  CHECK_NOTHROW(load_scores(tmp.file("close.json")));
}
