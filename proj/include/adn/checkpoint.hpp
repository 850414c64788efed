#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "adn/tensor.hpp"

namespace adn {

// ADNW checkpoint: little-endian binary. Layout:
//   magic "ADNW" | version u32 | count u32
//   per tensor, names in lexicographic order:
//     name_len u32 | name bytes | rank u32 | dims u32[rank] | offset u64
//   raw f32 data section (offsets are relative to its start)
// Both norm parameter sets and all running statistics are ordinary entries.

void write_checkpoint(const std::filesystem::path& path,
                      const std::map<std::string, Tensor>& tensors);

std::map<std::string, Tensor> read_checkpoint(const std::filesystem::path& path);

}  // namespace adn
