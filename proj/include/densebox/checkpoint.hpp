#pragma once

#include <filesystem>
#include <span>

#include "densebox/tensor.hpp"

namespace densebox {

inline constexpr char kCheckpointMagic[] = "DBXCKPT1";

// Binary layout: 8-byte magic, then per parameter
//   u32 name length, name bytes (UTF-8),
//   u32 dim count, u32 dims[],
//   f64 payload (little-endian, row-major).
// Round-trips bit-exactly.
void save_checkpoint(const std::filesystem::path& path,
                     std::span<const Param* const> params);

// Fills existing params by name; shape mismatches, missing or extra entries,
// and non-finite payloads raise DataError naming the offender.
void load_checkpoint(const std::filesystem::path& path,
                     std::span<Param* const> params);

}  // namespace densebox
