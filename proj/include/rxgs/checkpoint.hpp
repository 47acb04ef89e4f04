// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "rxgs/trainer.hpp"

namespace rxgs::io {

// RXGS container: magic, u32 version, u64 header length, JSON header with a
// named-array manifest (dtype/shape/offset), then little-endian f64 arrays
// in manifest order. Holds the scene, the grid, and (when present) the
// conditioning state as a second named-array group.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const train::Model& model);
train::Model load_checkpoint(const std::filesystem::path& path);

}  // namespace rxgs::io
