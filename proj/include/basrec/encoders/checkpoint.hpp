#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "basrec/encoders/model.hpp"

namespace basrec::encoders {

// Little-endian layout:
//   "BASR" | u32 version | u32 kind | u32 |V| | u32 D | u32 N | u32 L |
//   u32 tensor count | per tensor: u64 element count, f32 values
// Tensors follow the model's parameter declaration order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model);
Model<float> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model);
Model<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace basrec::encoders
