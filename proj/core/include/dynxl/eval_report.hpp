#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dynxl {

struct SegmentSummary {
  std::size_t tokens = 0;
  double nats = 0.0;

  friend bool operator==(const SegmentSummary&, const SegmentSummary&) = default;
};

/// Losses of one evaluation pass over a stream.
struct EvalReport {
  std::string name;
  std::string config_fingerprint;
  std::string vocab_fingerprint;
  std::vector<double> token_nats;
  std::vector<SegmentSummary> segments;
  double total_nats = 0.0;
  std::size_t token_count = 0;
  std::uint64_t unknown_tokens = 0;
  std::uint64_t floored_probabilities = 0;
  // Runtime bookkeeping; not part of the serialized record.
  std::size_t updates_applied = 0;

  double mean_nats() const { return token_count == 0 ? 0.0 : total_nats / static_cast<double>(token_count); }
  double bits_per_token() const { return mean_nats() / std::numbers::ln2; }
  double perplexity() const { return std::exp(mean_nats()); }
};

// Line-oriented "key = value" record; doubles are written with 17
// significant digits so they parse back bit-exactly.
std::string format_report(const EvalReport& report);
EvalReport parse_report(std::string_view text);
void write_report(const std::filesystem::path& path, const EvalReport& report);
EvalReport read_report(const std::filesystem::path& path);

// Per-token losses as raw little-endian float64 values.
void write_token_dump(const std::filesystem::path& path, std::span<const double> token_nats);
std::vector<double> read_token_dump(const std::filesystem::path& path);

}  // namespace dynxl
