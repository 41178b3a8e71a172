#pragma once

#include <string>
#include <vector>

#include "msst/tensor.hpp"

namespace msst {

// Skeleton topology: a rooted tree over joints given as a parent array.
// A is the symmetric physical-bone adjacency; P the directed source-target
// matrix with P[i][j] = 1 iff joint i is the parent (source) of joint j.
struct GraphSpec {
  std::string name;
  index_t joints = 0;
  std::vector<index_t> parents;
  std::vector<double> adjacency;      // A, joints x joints
  std::vector<double> source_target;  // P, joints x joints
  index_t nilpotency = 0;             // smallest K with P^K = 0
};

// Validates the parent array (exactly one root, in-range indices, acyclic)
// and derives A, P and the nilpotency index.
GraphSpec build_graph(const std::vector<index_t>& parents, std::string name = "");

// Symmetric normalization D^{-1/2} (A + I) D^{-1/2} with D the degree
// matrix of A + I; used to initialize the adaptive topologies.
std::vector<double> normalize_adjacency(const std::vector<double>& a, index_t n);

// Exact integer-arithmetic matrix power of a binary matrix, cast to double.
std::vector<double> matrix_power(const std::vector<double>& p, index_t n, index_t k);

// Graph file: JSON object {"name": string, "parents": [int,...]}.
GraphSpec load_graph(const std::string& path);
void save_graph(const std::string& path, const GraphSpec& graph);

} // namespace msst
