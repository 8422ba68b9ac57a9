// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "streammem/kv_memory.hpp"

namespace streammem {

inline constexpr std::uint32_t kSnapshotVersion = 1;

/// Binary snapshot layout, all integers and floats little-endian:
///
///   "SKV1"
///   version u32 | n_layers u32 | n_heads u32 | head_dim u32 | budget u64 | step u64
///   per layer:
///     count u64
///     count x { key f32[n_heads*head_dim] | value f32[...] | score f32
///               | position_id u64 | frame_id i64 | is_prototype u8 }
///   crc32 u32 over every preceding byte (zlib polynomial)
std::string serialize_snapshot(const CompressedMemory& memory);

/// Throws FormatError on bad magic, version, truncation, trailing bytes or a
/// checksum mismatch. Nothing is returned unless the whole buffer validates.
CompressedMemory deserialize_snapshot(std::string_view bytes);

/// Writes atomically via a temporary file in the same directory.
void snapshot_save(const CompressedMemory& memory, const std::filesystem::path& path);
CompressedMemory snapshot_load(const std::filesystem::path& path);

} // namespace streammem
