#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msst/tensor.hpp"

namespace msst {

// One labeled sample: T frames of N joints with C coordinates each.
struct SkeletonSequence {
  index_t frames = 0;
  index_t joints = 0;
  index_t channels = 0;
  index_t label = 0;
  std::vector<double> data; // [T][N][C] row-major

  double& at(index_t t, index_t n, index_t c) {
    return data[static_cast<std::size_t>((t * joints + n) * channels + c)];
  }
  double at(index_t t, index_t n, index_t c) const {
    return data[static_cast<std::size_t>((t * joints + n) * channels + c)];
  }
};

// JSON Lines, one {"label": int, "frames": [T][N][C]} object per line.
// Malformed lines are reported with their line number; N and C must be
// consistent across the file.
std::vector<SkeletonSequence> load_dataset(const std::string& path);
void save_dataset(const std::string& path, const std::vector<SkeletonSequence>& samples);

// Synthetic data: class-specific sinusoidal joint trajectories (distinct
// frequency, phase, amplitude and offset per class) plus Gaussian noise.
// Templates depend only on (class, joint, channel); the seed drives frame
// counts and noise, so different seeds share the same class structure.
struct SyntheticSpec {
  index_t num_classes = 4;
  index_t per_class = 50;
  index_t joints = 10;
  index_t t_min = 48;
  index_t t_max = 80;
  double noise = 0.05;
  std::uint64_t seed = 1;
};

std::vector<SkeletonSequence> generate_synthetic(const SyntheticSpec& spec);

} // namespace msst
