#include <doctest.h>

#include <cmath>
#include <vector>

#include "msst/graph.hpp"
#include "test_util.hpp"

using namespace msst;
using testutil::max_abs_diff;

namespace {

// Random rooted tree: parent of node i is drawn from 0..i-1.
std::vector<index_t> random_tree(Rng& rng, index_t n) {
  std::vector<index_t> parents(static_cast<std::size_t>(n), -1);
  for (index_t i = 1; i < n; ++i)
    parents[static_cast<std::size_t>(i)] = rng.randint(i);
  return parents;
}

bool all_zero(const std::vector<double>& v) {
  for (double x : v)
    if (x != 0.0) return false;
  return true;
}

} // namespace

TEST_CASE("three-joint chain derives the expected matrices") {
  GraphSpec g = build_graph({-1, 0, 1}, "chain3");
  CHECK(g.name == "chain3");
  CHECK(g.joints == 3);
  CHECK(g.adjacency == std::vector<double>{0, 1, 0, 1, 0, 1, 0, 1, 0});
  CHECK(g.source_target == std::vector<double>{0, 1, 0, 0, 0, 1, 0, 0, 0});
  CHECK(g.nilpotency == 3);
}

TEST_CASE("single joint graph") {
  GraphSpec g = build_graph({-1});
  CHECK(g.joints == 1);
  CHECK(g.adjacency == std::vector<double>{0});
  CHECK(g.source_target == std::vector<double>{0});
  CHECK(g.nilpotency == 1);
  CHECK(normalize_adjacency(g.adjacency, 1) == std::vector<double>{1.0});
}

TEST_CASE("normalized adjacency of small chains") {
  // Two joints: every entry of (A+I) has degree 2, so all entries become 1/2.
  GraphSpec g2 = build_graph({-1, 0});
  CHECK(max_abs_diff(normalize_adjacency(g2.adjacency, 2),
                     std::vector<double>(4, 0.5)) < 1e-15);

  GraphSpec g3 = build_graph({-1, 0, 1});
  const std::vector<double> want{
      0.4999999999999999, 0.408248290463863,  0.0,
      0.408248290463863,  0.3333333333333334, 0.408248290463863,
      0.0,                0.408248290463863,  0.4999999999999999};
  CHECK(max_abs_diff(normalize_adjacency(g3.adjacency, 3), want) < 1e-15);
}

TEST_CASE("normalized adjacency is symmetric with spectral radius at most one") {
  Rng rng(31);
  GraphSpec g = build_graph(random_tree(rng, 12));
  const auto n = normalize_adjacency(g.adjacency, 12);
  for (index_t i = 0; i < 12; ++i)
    for (index_t j = 0; j < 12; ++j)
      CHECK(n[static_cast<std::size_t>(i * 12 + j)] ==
            n[static_cast<std::size_t>(j * 12 + i)]);

  // Power iteration on the symmetric matrix.
  std::vector<double> v(12, 1.0 / std::sqrt(12.0));
  double lambda = 0.0;
  for (int it = 0; it < 200; ++it) {
    std::vector<double> w(12, 0.0);
    for (index_t i = 0; i < 12; ++i)
      for (index_t j = 0; j < 12; ++j)
        w[static_cast<std::size_t>(i)] +=
            n[static_cast<std::size_t>(i * 12 + j)] * v[static_cast<std::size_t>(j)];
    double norm = 0.0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    REQUIRE(norm > 0.0);
    for (auto& x : w) x /= norm;
    lambda = norm;
    v = w;
  }
  CHECK(lambda <= 1.0 + 1e-9);
}

TEST_CASE("matrix powers of the source-target matrix") {
  GraphSpec g = build_graph({-1, 0, 1});
  const auto p0 = matrix_power(g.source_target, 3, 0);
  CHECK(p0 == std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  const auto p1 = matrix_power(g.source_target, 3, 1);
  CHECK(p1 == g.source_target);
  const auto p2 = matrix_power(g.source_target, 3, 2);
  CHECK(p2 == std::vector<double>{0, 0, 1, 0, 0, 0, 0, 0, 0});
  CHECK(all_zero(matrix_power(g.source_target, 3, 3)));
}

TEST_CASE("source-target powers vanish at the nilpotency index on random trees") {
  Rng rng(32);
  for (int iter = 0; iter < 5; ++iter) {
    const index_t n = 2 + rng.randint(14);
    GraphSpec g = build_graph(random_tree(rng, n));
    CHECK(g.nilpotency >= 1);
    CHECK(g.nilpotency <= n);
    CHECK(!all_zero(matrix_power(g.source_target, n, g.nilpotency - 1)));
    CHECK(all_zero(matrix_power(g.source_target, n, g.nilpotency)));
  }
}

TEST_CASE("adjacency mirrors the parent relation") {
  Rng rng(33);
  const index_t n = 9;
  const auto parents = random_tree(rng, n);
  GraphSpec g = build_graph(parents);
  for (index_t i = 0; i < n; ++i)
    for (index_t j = 0; j < n; ++j) {
      const bool bone = parents[static_cast<std::size_t>(i)] == j ||
                        parents[static_cast<std::size_t>(j)] == i;
      CHECK(g.adjacency[static_cast<std::size_t>(i * n + j)] == (bone ? 1.0 : 0.0));
      const bool directed = parents[static_cast<std::size_t>(j)] == i;
      CHECK(g.source_target[static_cast<std::size_t>(i * n + j)] ==
            (directed ? 1.0 : 0.0));
    }
}

TEST_CASE("invalid parent arrays are rejected") {
  CHECK_THROWS_WITH_AS(build_graph({}), doctest::Contains("empty"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(build_graph({-1, -1}), doctest::Contains("root"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(build_graph({1, 0}), doctest::Contains("root"),
                       std::runtime_error);
  CHECK_THROWS_AS(build_graph({-1, 5}), std::runtime_error);
  CHECK_THROWS_AS(build_graph({-1, 2, 1}), std::runtime_error); // 1 <-> 2 cycle
  CHECK_THROWS_AS(build_graph({-1, 1}), std::runtime_error);    // self-parent
}

TEST_CASE("matrix_power rejects negative exponents") {
  GraphSpec g = build_graph({-1, 0});
  CHECK_THROWS_AS(matrix_power(g.source_target, 2, -1), std::runtime_error);
}

TEST_CASE("bundled graphs have the documented size and nilpotency") {
  GraphSpec hand = load_graph(testutil::data_dir() + "/graphs/hand22.json");
  CHECK(hand.joints == 22);
  CHECK(hand.nilpotency == 5);

  GraphSpec body25 = load_graph(testutil::data_dir() + "/graphs/body25.json");
  CHECK(body25.joints == 25);
  CHECK(body25.nilpotency == 8);

  GraphSpec body20 = load_graph(testutil::data_dir() + "/graphs/body20.json");
  CHECK(body20.joints == 20);
  CHECK(body20.nilpotency == 6);

  GraphSpec synth10 = load_graph(testutil::data_dir() + "/graphs/synth10.json");
  CHECK(synth10.joints == 10);
  CHECK(synth10.nilpotency == 4);
}

TEST_CASE("graph files round trip") {
  testutil::TempDir tmp;
  GraphSpec g = build_graph({-1, 0, 1, 1, 0}, "tiny");
  save_graph(tmp.file("g.json"), g);
  GraphSpec back = load_graph(tmp.file("g.json"));
  CHECK(back.name == g.name);
  CHECK(back.parents == g.parents);
  CHECK(back.adjacency == g.adjacency);
  CHECK(back.source_target == g.source_target);
  CHECK(back.nilpotency == g.nilpotency);
}

TEST_CASE("graph loader reports malformed files") {
  testutil::TempDir tmp;
  CHECK_THROWS_AS(load_graph(tmp.file("missing.json")), std::runtime_error);
  testutil::write_file(tmp.file("bad.json"), "{\"name\": \"x\"}");
  CHECK_THROWS_AS(load_graph(tmp.file("bad.json")), std::runtime_error);
  testutil::write_file(tmp.file("cycle.json"),
                       "{\"name\": \"c\", \"parents\": [-1, 2, 1]}");
  CHECK_THROWS_AS(load_graph(tmp.file("cycle.json")), std::runtime_error);
}
