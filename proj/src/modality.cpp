#include "msst/modality.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace msst {

SkeletonSequence generalized_bone(const SkeletonSequence& x, index_t k,
                                  const GraphSpec& graph) {
  if (x.joints != graph.joints)
    throw std::runtime_error("generalized_bone: sequence has " + std::to_string(x.joints) +
                             " joints but graph has " + std::to_string(graph.joints));
  if (k < 1 || k > graph.nilpotency)
    throw std::runtime_error("generalized_bone: k=" + std::to_string(k) +
                             " outside [1, " + std::to_string(graph.nilpotency) + "]");
  // k-th ancestor of each joint, or -1 when the chain ends before k steps.
  std::vector<index_t> ancestor(static_cast<std::size_t>(x.joints));
  for (index_t j = 0; j < x.joints; ++j) {
    index_t cur = j;
    for (index_t step = 0; step < k && cur != -1; ++step)
      cur = graph.parents[static_cast<std::size_t>(cur)];
    ancestor[static_cast<std::size_t>(j)] = cur;
  }
  SkeletonSequence out = x;
  for (index_t t = 0; t < x.frames; ++t)
    for (index_t j = 0; j < x.joints; ++j) {
      const index_t a = ancestor[static_cast<std::size_t>(j)];
      if (a == -1) continue;
      for (index_t c = 0; c < x.channels; ++c)
        out.at(t, j, c) = x.at(t, j, c) - x.at(t, a, c);
    }
  return out;
}

SkeletonSequence motion_diff(const SkeletonSequence& x) {
  if (x.frames < 2)
    throw std::runtime_error("motion_diff: need at least 2 frames, got " +
                             std::to_string(x.frames));
  SkeletonSequence out = x;
  for (index_t t = 0; t < x.frames; ++t)
    for (index_t j = 0; j < x.joints; ++j)
      for (index_t c = 0; c < x.channels; ++c)
        out.at(t, j, c) = t + 1 < x.frames ? x.at(t + 1, j, c) - x.at(t, j, c) : 0.0;
  return out;
}

SkeletonSequence resize_temporal(const SkeletonSequence& x, index_t target_frames) {
  if (x.frames < 2)
    throw std::runtime_error("resize_temporal: need at least 2 frames, got " +
                             std::to_string(x.frames));
  if (target_frames < 2)
    throw std::runtime_error("resize_temporal: target frame count must be at least 2");
  SkeletonSequence out;
  out.frames = target_frames;
  out.joints = x.joints;
  out.channels = x.channels;
  out.label = x.label;
  out.data.resize(static_cast<std::size_t>(target_frames * x.joints * x.channels));
  for (index_t q = 0; q < target_frames; ++q) {
    const double s = static_cast<double>(q) * static_cast<double>(x.frames - 1) /
                     static_cast<double>(target_frames - 1);
    const index_t i0 = std::min(static_cast<index_t>(std::floor(s)), x.frames - 2);
    const index_t i1 = i0 + 1;
    const double f = s - static_cast<double>(i0);
    for (index_t j = 0; j < x.joints; ++j)
      for (index_t c = 0; c < x.channels; ++c) {
        const double a = x.at(i0, j, c);
        const double b = x.at(i1, j, c);
        // clamp so the result stays inside [min(a,b), max(a,b)] even when
        // rounding in a + f*(b-a) would nudge it past an endpoint
        const double v = a + f * (b - a);
        out.at(q, j, c) = std::clamp(v, std::min(a, b), std::max(a, b));
      }
  }
  return out;
}

SkeletonSequence prepare_sequence(const SkeletonSequence& raw, const ModalitySpec& spec,
                                  index_t target_frames, const GraphSpec& graph) {
  SkeletonSequence seq = resize_temporal(raw, target_frames);
  seq = generalized_bone(seq, spec.k, graph);
  if (spec.kind == ModalityKind::motion) seq = motion_diff(seq);
  return seq;
}

ModalitySpec parse_modality(const std::string& name, index_t k_override,
                            const GraphSpec& graph) {
  ModalitySpec spec;
  if (name == "joint") {
    spec.kind = ModalityKind::position;
    spec.k = graph.nilpotency;
  } else if (name == "bone") {
    spec.kind = ModalityKind::position;
    spec.k = 1;
  } else if (name == "joint-motion") {
    spec.kind = ModalityKind::motion;
    spec.k = graph.nilpotency;
  } else if (name == "bone-motion") {
    spec.kind = ModalityKind::motion;
    spec.k = 1;
  } else {
    throw std::runtime_error(
        "unknown modality '" + name +
        "' (expected joint, bone, joint-motion or bone-motion)");
  }
  if (k_override >= 0) spec.k = k_override;
  if (spec.k < 1 || spec.k > graph.nilpotency)
    throw std::runtime_error("modality bone power k=" + std::to_string(spec.k) +
                             " outside [1, " + std::to_string(graph.nilpotency) + "]");
  return spec;
}

std::string stream_tag(const ModalitySpec& spec, const GraphSpec& graph) {
  const bool motion = spec.kind == ModalityKind::motion;
  if (spec.k == graph.nilpotency) return motion ? "JM" : "J";
  if (spec.k == 1) return motion ? "BM" : "B";
  if (motion) return "B" + std::to_string(spec.k) + "M";
  return "J" + std::to_string(spec.k);
}

} // namespace msst
