#pragma once

#include <string>
#include <vector>

#include "msst/tensor.hpp"

namespace msst {

// Per-stream softmax scores. JSON layout: {"tag", "classes", "ids",
// "labels", "scores"}; rows are sample-aligned across ensembled files.
struct StreamScores {
  std::string tag;
  index_t classes = 0;
  std::vector<index_t> ids;
  std::vector<index_t> labels;
  std::vector<double> scores; // ids.size() x classes
  std::string path;           // where it was loaded from, for diagnostics
};

StreamScores load_scores(const std::string& path);
void save_scores(const std::string& path, const StreamScores& scores);

struct EnsembleResult {
  double accuracy = 0.0;
  std::vector<index_t> predictions;
};

// Sums score matrices in sorted-tag order (so the result is independent of
// argument order) and takes the per-sample argmax. Requires identical ids,
// labels and class counts across files.
EnsembleResult ensemble(const std::vector<StreamScores>& streams);

} // namespace msst
