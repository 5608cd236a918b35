#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dynxl/model.hpp"

namespace dynxl {

enum class VocabKind { byte, char27, word };
enum class Split : std::uint8_t { none = 0, train = 1, valid = 2, test = 3 };

const char* to_string(VocabKind kind);
VocabKind vocab_kind_from_string(const std::string& text);
const char* to_string(Split split);

inline constexpr std::string_view kUnknownToken = "<unk>";

/// Token table with dense ids. Counts come from the training split only.
class Vocab {
 public:
  Vocab() = default;
  Vocab(VocabKind kind, std::vector<std::string> tokens, std::vector<std::uint64_t> counts,
        std::optional<TokenId> unknown_id);

  VocabKind kind() const noexcept { return kind_; }
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }
  std::optional<TokenId> unknown_id() const noexcept { return unknown_id_; }
  std::optional<TokenId> find(std::string_view token) const;

  /// Hash of the kind and the ordered token table (counts excluded).
  std::uint64_t fingerprint() const;

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.kind_ == b.kind_ && a.tokens_ == b.tokens_ && a.counts_ == b.counts_ &&
           a.unknown_id_ == b.unknown_id_;
  }

 private:
  VocabKind kind_ = VocabKind::byte;
  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> counts_;
  std::optional<TokenId> unknown_id_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Immutable token id sequence. Copies share the underlying storage.
class TokenStream {
 public:
  TokenStream() : ids_(std::make_shared<const std::vector<TokenId>>()) {}
  TokenStream(std::vector<TokenId> ids, std::size_t vocab_size, Split split = Split::none);

  std::span<const TokenId> ids() const noexcept { return *ids_; }
  std::size_t size() const noexcept { return ids_->size(); }
  bool empty() const noexcept { return ids_->empty(); }
  std::size_t vocab_size() const noexcept { return vocab_size_; }
  Split split() const noexcept { return split_; }

  /// Tokens [begin, begin + count) as a new stream with the same vocab.
  TokenStream slice(std::size_t begin, std::size_t count, Split split) const;

 private:
  std::shared_ptr<const std::vector<TokenId>> ids_;
  std::size_t vocab_size_ = 0;
  Split split_ = Split::none;
};

struct CorpusLoad {
  Vocab vocab;
  TokenStream stream;
  std::uint64_t unknown_count = 0;  // tokens outside the training vocabulary
};

/// Byte-level corpus. The vocabulary is the set of byte values seen in the
/// first `train_len` bytes (all bytes by default), ascending. Later bytes
/// missing from it map to an appended unknown id.
CorpusLoad load_byte_corpus(std::span<const std::uint8_t> raw,
                            std::optional<std::size_t> train_len = std::nullopt);

/// Lowercases ASCII letters and collapses every maximal run of other bytes
/// into one space.
std::string reduce_text_to_char27(std::string_view raw);

/// Fixed 27-symbol vocabulary (space, then a..z); counts over the first
/// `train_len` reduced symbols.
CorpusLoad reduce_to_char27(std::string_view raw, std::optional<std::size_t> train_len = std::nullopt);

/// Whitespace tokens; vocabulary is the `vocab_limit` most frequent tokens of
/// the first `train_len` tokens (ties lexicographic) plus a reserved unknown.
CorpusLoad build_word_stream(std::string_view raw, std::size_t vocab_limit,
                             std::optional<std::size_t> train_len = std::nullopt);

/// Symbols of `raw` under the given tokenization, before id assignment.
std::size_t symbol_count(VocabKind kind, std::string_view raw);

struct SplitFractions {
  double train = 0.9;
  double valid = 0.05;
  double test = 0.05;
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t valid = 0;
  std::size_t test = 0;
};

/// Floor for the train and valid cut points, remainder to test. Throws
/// DataError if any split would be empty, ConfigError on bad fractions.
SplitSizes split_sizes(std::size_t total, const SplitFractions& fractions);

struct SplitStreams {
  TokenStream train;
  TokenStream valid;
  TokenStream test;
};

SplitStreams split_fractions(const TokenStream& stream, const SplitFractions& fractions);

struct PreparedCorpus {
  Vocab vocab;
  SplitStreams splits;
  std::uint64_t unknown_count = 0;
};

/// Tokenizes, builds the vocabulary on the training portion only and splits.
PreparedCorpus prepare_corpus(VocabKind kind, std::string_view raw, const SplitFractions& fractions,
                              std::size_t vocab_limit = 50000);

/// Inverse of tokenization for byte and char27 vocabularies; words are
/// joined with single spaces.
std::string detokenize(const Vocab& vocab, std::span<const TokenId> ids);

struct RepetitionCorpusSpec {
  std::uint64_t seed = 1;
  std::size_t vocab_size = 64;
  std::size_t n_patterns = 8;
  std::size_t pattern_len = 16;
  // Fraction of emitted blocks that are i.i.d. uniform background tokens
  // instead of pattern copies, in [0, 1).
  double background_entropy = 0.5;
  std::size_t length = 10000;
  // Each document draws a fresh pattern bank; 0 means one document.
  std::size_t document_len = 0;
};

/// Synthetic stream of documents, each re-using its own random pattern bank.
TokenStream gen_repetition_corpus(const RepetitionCorpusSpec& spec);

/// Pattern bank of document `doc` for the given spec (for occurrence checks).
std::vector<std::vector<TokenId>> repetition_patterns(const RepetitionCorpusSpec& spec, std::size_t doc);

/// Consecutive non-overlapping windows; the last may be short.
std::vector<std::span<const TokenId>> segment_iter(std::span<const TokenId> stream, std::size_t segment_len);

// Stream file: "DETS1", u32 vocab_size, u64 count, u8 split, u32 ids (LE).
void write_stream(const std::filesystem::path& path, const TokenStream& stream);
TokenStream read_stream(const std::filesystem::path& path);

// Vocabulary sidecar: header line then "token<TAB>id<TAB>count" per entry.
std::string format_vocab(const Vocab& vocab);
Vocab parse_vocab(std::string_view text);
void write_vocab(const std::filesystem::path& path, const Vocab& vocab);
Vocab read_vocab(const std::filesystem::path& path);

}  // namespace dynxl
