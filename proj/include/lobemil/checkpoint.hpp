#pragma once

#include <map>
#include <string>

#include "lobemil/tensor.hpp"

namespace lobemil {

// Checkpoint container: u64 little-endian header length, a JSON header
// mapping each tensor name to {shape, dtype:"f64", offset}, then the raw
// little-endian f64 payload. Round trips are bit-exact.
void save_checkpoint(const std::string& path,
                     const std::map<std::string, Tensor>& tensors);

std::map<std::string, Tensor> load_checkpoint(const std::string& path);

}  // namespace lobemil
