#pragma once

#include <string>

#include "msst/dataset.hpp"
#include "msst/graph.hpp"

namespace msst {

enum class ModalityKind { position, motion };

// Bone power k selects the representation: k=1 bones (joint minus parent),
// k = nilpotency index gives back the joints themselves.
struct ModalitySpec {
  ModalityKind kind = ModalityKind::position;
  index_t k = 1;
};

// Per frame, subtracts each joint's k-th ancestor: out = (I - transpose(P)^k) x
// in the row-per-joint layout. Requires 1 <= k <= nilpotency.
SkeletonSequence generalized_bone(const SkeletonSequence& x, index_t k,
                                  const GraphSpec& graph);

// Forward temporal difference, final frame zeroed; shape preserved.
SkeletonSequence motion_diff(const SkeletonSequence& x);

// Linear interpolation onto target_frames uniform sample points over
// [0, T-1]; endpoints exact, outputs clamped to the enclosing frame pair.
SkeletonSequence resize_temporal(const SkeletonSequence& x, index_t target_frames);

// Full input pipeline: resize, then bone transform, then (for motion
// modalities) temporal differentiation.
SkeletonSequence prepare_sequence(const SkeletonSequence& raw, const ModalitySpec& spec,
                                  index_t target_frames, const GraphSpec& graph);

// CLI names: joint / bone / joint-motion / bone-motion. k_override < 0 keeps
// the modality default (joint -> nilpotency K, bone -> 1).
ModalitySpec parse_modality(const std::string& name, index_t k_override,
                            const GraphSpec& graph);

// Score-file stream tag: J/B/JM/BM for the standard four, J{k}/B{k}M for
// other bone powers.
std::string stream_tag(const ModalitySpec& spec, const GraphSpec& graph);

} // namespace msst
