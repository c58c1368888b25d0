#pragma once

#include "cpat/models.hpp"

#include <map>
#include <optional>
#include <string>

namespace cpat::cli {

/// Unreadable, corrupted or mismatched checkpoint; a runtime error (exit 3).
class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Binary layout:
//   "CPAT1"
//   u32 header length, then header text: one "key=value" per line holding
//     dims, dropout (hex float), meta.<key> entries and one
//     "segment=<name> <offset> <rows> <cols>" line per parameter block
//   u64 entry count, then that many little-endian f64 values (flat gamma)
//   u64 FNV-1a checksum of the payload bytes
struct Checkpoint {
  ModelParams params;
  std::map<std::string, std::string> meta;
};

inline constexpr char kCheckpointMagic[] = "CPAT1";

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::string& bytes, const std::optional<ModelDims>& expected = std::nullopt);

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
/// Validates magic, checksum, segment map and, when given, the dimensions.
Checkpoint load_checkpoint(const std::string& path, const std::optional<ModelDims>& expected = std::nullopt);

}  // namespace cpat::cli
