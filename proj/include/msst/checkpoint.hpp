#pragma once

#include <string>

#include "msst/model.hpp"

namespace msst {

// Binary checkpoint: magic "MSST", u32 LE format version, then for every
// parameter in store order: u32 name length, name bytes, u32 rank, u32 dims,
// values as f32 LE. Loading requires an identically-structured store.
void save_checkpoint(const std::string& path, const ParameterStore& store);
void load_checkpoint(const std::string& path, ParameterStore& store);

} // namespace msst
