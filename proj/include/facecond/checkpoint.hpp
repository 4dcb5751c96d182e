#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "facecond/params.hpp"

namespace facecond {

// Binary layout, little-endian:
//   "MMCK" u32 version u64 config_hash u32 stage u64 step u32 count
//   count x { u32 name_len, name, u32 rank, rank x u32 dim, u64 offset }
//   u64 payload_bytes, payload of float32
// Entries are sorted by name; offsets are byte offsets into the payload and
// tile it without gaps.
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Stage boundary a checkpoint was written at.
enum class CheckpointStage : std::uint32_t { Init = 0, BasePretrain = 1, ImagePretrain = 2, VideoFinetune = 3 };
std::string to_string(CheckpointStage s);

struct Checkpoint {
  std::uint64_t config_hash = 0;  // Config::architecture_hash
  CheckpointStage stage = CheckpointStage::Init;
  std::uint64_t step = 0;
  Params params;
};

std::vector<char> serialize_checkpoint(const Checkpoint& ck);
// Throws DataError on a bad magic, version or layout.
Checkpoint deserialize_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ck);
// Also refuses (DataError) a checkpoint whose hash differs from
// config.architecture_hash().
Checkpoint load_checkpoint(const std::string& path, const Config& config);

}  // namespace facecond
