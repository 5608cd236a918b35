#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dynxl/dyneval.hpp"
#include "dynxl/model.hpp"

namespace dynxl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Single-file container: magic "DTXL1", then sections of
// (4-byte tag, u64 payload length, payload). Tags: VERS, CONF, PARM, STAT
// (optional), VOCB, PROV. Parameters are stored as f64 in ParamSet order.
struct Checkpoint {
  ModelParams params;
  std::optional<GradStats> stats;
  std::string vocab_fingerprint;
  std::uint64_t seed = 0;
  std::uint64_t steps = 0;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
/// Throws DataError on a malformed container.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws FingerprintError unless the checkpoint was trained on `fingerprint`.
void require_vocab(const Checkpoint& checkpoint, const std::string& fingerprint);

}  // namespace dynxl
