#pragma once

#include "et/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace et::checkpoint {

inline constexpr char MAGIC[4] = {'E', 'T', 'C', 'K'};
inline constexpr std::uint32_t VERSION = 1;

// Binary container, all integers little-endian:
//   "ETCK" | version u32 | record count u32
//   per record: name length u32, UTF-8 name, rank u32, dims u32 each,
//               row-major 64-bit floats
//   trailer: u32 byte length + UTF-8 key=value lines (config echo)
struct Checkpoint {
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::string> config;
};

void save(const Checkpoint& c, const std::string& path);
Checkpoint load(const std::string& path);

} // namespace et::checkpoint
