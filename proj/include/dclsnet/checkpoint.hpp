#pragma once

#include <string>

#include "dclsnet/model.hpp"

namespace dclsnet {

// Container layout (all little-endian):
//   line 1            magic "DCLSNET-CKPT v1"
//   "meta.*: value"   free-form metadata (format version, spec hash, seed)
//   "spec.*: value"   serialized ModelSpec
//   "array: <name> <d0>x<d1>... <offset> <bytes>"  one line per tensor
//   "END-HEADER"
//   raw float32 payload; offsets are relative to the byte after the header
void save_checkpoint(const Model& model, const std::string& path,
                     const std::string& extra_meta = "");

Model load_checkpoint(const std::string& path);

std::string spec_hash(const ModelSpec& spec);

// Same container layout without the spec block, for standalone arrays
// (spectrogram export).
void save_array_container(const std::string& path,
                          const std::vector<std::pair<std::string, Tensor>>& arrays);
std::vector<std::pair<std::string, Tensor>> load_array_container(const std::string& path);

}  // namespace dclsnet
