#include "msst/graph.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace msst {

namespace {

using json = nlohmann::json;

std::vector<std::int64_t> to_int_matrix(const std::vector<double>& m, index_t n,
                                        const char* op) {
  std::vector<std::int64_t> out(static_cast<std::size_t>(n * n));
  for (index_t i = 0; i < n * n; ++i) {
    const double v = m[static_cast<std::size_t>(i)];
    const double r = std::nearbyint(v);
    if (std::fabs(v - r) > 1e-9)
      throw std::runtime_error(std::string(op) + ": matrix entries must be integers");
    out[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(r);
  }
  return out;
}

bool is_zero(const std::vector<std::int64_t>& m) {
  for (std::int64_t v : m)
    if (v != 0) return false;
  return true;
}

std::vector<std::int64_t> int_matmul(const std::vector<std::int64_t>& a,
                                     const std::vector<std::int64_t>& b, index_t n) {
  std::vector<std::int64_t> c(static_cast<std::size_t>(n * n), 0);
  for (index_t i = 0; i < n; ++i)
    for (index_t k = 0; k < n; ++k) {
      const std::int64_t av = a[static_cast<std::size_t>(i * n + k)];
      if (av == 0) continue;
      for (index_t j = 0; j < n; ++j)
        c[static_cast<std::size_t>(i * n + j)] += av * b[static_cast<std::size_t>(k * n + j)];
    }
  return c;
}

} // namespace

GraphSpec build_graph(const std::vector<index_t>& parents, std::string name) {
  const index_t n = static_cast<index_t>(parents.size());
  if (n < 1) throw std::runtime_error("build_graph: empty parent array");
  index_t roots = 0;
  for (index_t j = 0; j < n; ++j) {
    const index_t p = parents[static_cast<std::size_t>(j)];
    if (p == -1) {
      ++roots;
    } else if (p < 0 || p >= n) {
      throw std::runtime_error("build_graph: parent index " + std::to_string(p) +
                               " of joint " + std::to_string(j) + " out of range");
    } else if (p == j) {
      throw std::runtime_error("build_graph: joint " + std::to_string(j) +
                               " is its own parent");
    }
  }
  if (roots != 1)
    throw std::runtime_error("build_graph: expected exactly one root (parent -1), got " +
                             std::to_string(roots));
  // acyclicity: every joint must reach the root within n steps
  for (index_t j = 0; j < n; ++j) {
    index_t cur = j, steps = 0;
    while (parents[static_cast<std::size_t>(cur)] != -1) {
      cur = parents[static_cast<std::size_t>(cur)];
      if (++steps > n)
        throw std::runtime_error("build_graph: cycle detected involving joint " +
                                 std::to_string(j));
    }
  }

  GraphSpec g;
  g.name = std::move(name);
  g.joints = n;
  g.parents = parents;
  g.adjacency.assign(static_cast<std::size_t>(n * n), 0.0);
  g.source_target.assign(static_cast<std::size_t>(n * n), 0.0);
  for (index_t j = 0; j < n; ++j) {
    const index_t p = parents[static_cast<std::size_t>(j)];
    if (p == -1) continue;
    g.adjacency[static_cast<std::size_t>(p * n + j)] = 1.0;
    g.adjacency[static_cast<std::size_t>(j * n + p)] = 1.0;
    g.source_target[static_cast<std::size_t>(p * n + j)] = 1.0;
  }

  auto power = to_int_matrix(g.source_target, n, "build_graph");
  g.nilpotency = 1;
  while (!is_zero(power)) {
    power = int_matmul(power, to_int_matrix(g.source_target, n, "build_graph"), n);
    ++g.nilpotency;
    if (g.nilpotency > n)
      throw std::runtime_error("build_graph: source-target matrix is not nilpotent");
  }
  return g;
}

std::vector<double> normalize_adjacency(const std::vector<double>& a, index_t n) {
  if (static_cast<index_t>(a.size()) != n * n)
    throw std::runtime_error("normalize_adjacency: matrix size does not match n");
  for (index_t i = 0; i < n; ++i)
    for (index_t j = 0; j < n; ++j) {
      const double v = a[static_cast<std::size_t>(i * n + j)];
      if (v != 0.0 && v != 1.0)
        throw std::runtime_error("normalize_adjacency: adjacency must be binary");
      if (v != a[static_cast<std::size_t>(j * n + i)])
        throw std::runtime_error("normalize_adjacency: adjacency must be symmetric");
    }
  std::vector<double> dinv(static_cast<std::size_t>(n));
  for (index_t i = 0; i < n; ++i) {
    double deg = 1.0; // self-loop
    for (index_t j = 0; j < n; ++j) deg += a[static_cast<std::size_t>(i * n + j)];
    dinv[static_cast<std::size_t>(i)] = 1.0 / std::sqrt(deg);
  }
  std::vector<double> out(static_cast<std::size_t>(n * n));
  for (index_t i = 0; i < n; ++i)
    for (index_t j = 0; j < n; ++j) {
      const double self = (i == j) ? 1.0 : 0.0;
      out[static_cast<std::size_t>(i * n + j)] =
          dinv[static_cast<std::size_t>(i)] *
          (a[static_cast<std::size_t>(i * n + j)] + self) *
          dinv[static_cast<std::size_t>(j)];
    }
  return out;
}

std::vector<double> matrix_power(const std::vector<double>& p, index_t n, index_t k) {
  if (k < 0) throw std::runtime_error("matrix_power: negative exponent");
  if (static_cast<index_t>(p.size()) != n * n)
    throw std::runtime_error("matrix_power: matrix size does not match n");
  std::vector<std::int64_t> acc(static_cast<std::size_t>(n * n), 0);
  for (index_t i = 0; i < n; ++i) acc[static_cast<std::size_t>(i * n + i)] = 1;
  const auto base = to_int_matrix(p, n, "matrix_power");
  for (index_t step = 0; step < k; ++step) acc = int_matmul(acc, base, n);
  std::vector<double> out(static_cast<std::size_t>(n * n));
  for (index_t i = 0; i < n * n; ++i)
    out[static_cast<std::size_t>(i)] = static_cast<double>(acc[static_cast<std::size_t>(i)]);
  return out;
}

GraphSpec load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_graph: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("load_graph: " + path + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("parents") || !j["parents"].is_array())
    throw std::runtime_error("load_graph: " + path +
                             ": expected {\"name\", \"parents\": [...]}");
  std::vector<index_t> parents;
  for (const auto& v : j["parents"]) {
    if (!v.is_number_integer())
      throw std::runtime_error("load_graph: " + path + ": parents must be integers");
    parents.push_back(v.get<index_t>());
  }
  return build_graph(parents, j.value("name", std::string{}));
}

void save_graph(const std::string& path, const GraphSpec& graph) {
  json j;
  j["name"] = graph.name;
  j["parents"] = graph.parents;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_graph: cannot open " + path);
  out << j.dump() << "\n";
}

} // namespace msst
