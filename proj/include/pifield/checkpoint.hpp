#pragma once

#include <map>

#include "pifield/tensor.hpp"

namespace pifield {

// Container of named float32 tensors. Layout, all little-endian:
//   magic "PFW1"
//   repeated until EOF: u32 name length, name bytes, u32 rank,
//                       u32 extent per axis, float32 payload
// Round-trips must be bit-exact, so payloads are copied raw.
void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& items);
std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path);
std::map<std::string, Tensor> load_tensor_map(const std::string& path);

}  // namespace pifield
