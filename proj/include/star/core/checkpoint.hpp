#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "star/core/parameters.hpp"
#include "star/core/tensor.hpp"

namespace star::core {

inline constexpr char kCheckpointMagic[4] = {'S', 'T', 'N', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Layout: "STNC", u32 version, u64 entry count, then per entry
// u32 name length, name bytes, u32 rank, u64 extents[rank], f64 data[numel].
// All integers and floats little-endian.
std::vector<unsigned char> encode_checkpoint(const NamedTensors& tensors);
NamedTensors decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& path);

NamedTensors to_named(const ParameterSet& params);
/// Overwrites every parameter from `tensors`; missing names or shape changes are errors.
void assign_from(ParameterSet& params, const NamedTensors& tensors);
const Tensor& find_tensor(const NamedTensors& tensors, const std::string& name);

}  // namespace star::core
