#pragma once

#include <filesystem>
#include <string>

#include "handnet/network.hpp"

namespace handnet {

// Checkpoint layout (all integers little-endian):
//   "HFCK" | u32 version | u8 network id (0 shallow, 1 deep) | u32 tensor count
//   per tensor: u16 name length | UTF-8 name | u8 rank | u32 dims | fp32 data
// Parameters are stored under their own names, Adam moments under
// "@adam_m/<name>" and "@adam_v/<name>", and the step counter as the
// two-element tensor "@step" holding {t / 65536, t % 65536}.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const ModelState<float>& state);

// Validates the bytes against `spec`: wrong network id or parameter shapes
// throw MismatchError, malformed bytes throw FormatError with the offset.
ModelState<float> decode_checkpoint(const std::string& bytes, const NetworkSpec& spec,
                                    const std::string& source = "checkpoint");

void save_checkpoint(const ModelState<float>& state, const std::filesystem::path& path);
ModelState<float> load_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec);

}  // namespace handnet
