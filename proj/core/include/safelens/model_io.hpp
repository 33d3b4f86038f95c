#pragma once

#include <string>

#include "safelens/nn.hpp"

namespace safelens {

// Checkpoint container: magic "SLMF", u32 version, a JSON header describing
// the architecture, metadata and parameter manifest, then the raw parameter
// payload as little-endian doubles, then an FNV-1a64 checksum of the payload.
// Round-trips are byte-identical.
void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);

uint64_t fnv1a64(const void* data, size_t len);

}  // namespace safelens
