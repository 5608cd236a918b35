#include "dynxl/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "dynxl/binary_io.hpp"
#include "dynxl/errors.hpp"

namespace dynxl {

const char* to_string(VocabKind kind) {
  switch (kind) {
    case VocabKind::byte: return "byte";
    case VocabKind::char27: return "char27";
    case VocabKind::word: return "word";
  }
  return "?";
}

VocabKind vocab_kind_from_string(const std::string& text) {
  if (text == "byte") return VocabKind::byte;
  if (text == "char27") return VocabKind::char27;
  if (text == "word") return VocabKind::word;
  throw ConfigError("data.kind: expected byte, char27 or word, got '" + text + "'");
}

const char* to_string(Split split) {
  switch (split) {
    case Split::none: return "none";
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

Vocab::Vocab(VocabKind kind, std::vector<std::string> tokens, std::vector<std::uint64_t> counts,
             std::optional<TokenId> unknown_id)
    : kind_(kind), tokens_(std::move(tokens)), counts_(std::move(counts)), unknown_id_(unknown_id) {
  if (counts_.size() != tokens_.size()) throw DataError("vocab: one count per token required");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw DataError("vocab: duplicate token entry");
    }
  }
  if (unknown_id_ && (*unknown_id_ < 0 || static_cast<std::size_t>(*unknown_id_) >= tokens_.size())) {
    throw DataError("vocab: unknown id outside table");
  }
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::uint64_t Vocab::fingerprint() const {
  std::uint64_t h = io::fnv1a(to_string(kind_));
  for (const auto& t : tokens_) {
    h = io::fnv1a(t, h);
    h = io::fnv1a(std::string_view("\0", 1), h);
  }
  return h;
}

TokenStream::TokenStream(std::vector<TokenId> ids, std::size_t vocab_size, Split split)
    : vocab_size_(vocab_size), split_(split) {
  for (TokenId t : ids) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) {
      throw DataError("token stream: id " + std::to_string(t) + " outside vocabulary of " +
                      std::to_string(vocab_size));
    }
  }
  ids_ = std::make_shared<const std::vector<TokenId>>(std::move(ids));
}

TokenStream TokenStream::slice(std::size_t begin, std::size_t count, Split split) const {
  if (begin + count > size()) throw DataError("token stream: slice out of range");
  auto all = ids();
  return TokenStream(std::vector<TokenId>(all.begin() + static_cast<std::ptrdiff_t>(begin),
                                          all.begin() + static_cast<std::ptrdiff_t>(begin + count)),
                     vocab_size_, split);
}

namespace {

std::size_t train_prefix(std::optional<std::size_t> train_len, std::size_t total) {
  return train_len ? std::min(*train_len, total) : total;
}

}  // namespace

CorpusLoad load_byte_corpus(std::span<const std::uint8_t> raw, std::optional<std::size_t> train_len) {
  if (raw.empty()) throw DataError("byte corpus: empty input");
  const std::size_t n_train = train_prefix(train_len, raw.size());
  if (n_train == 0) throw DataError("byte corpus: empty training portion");
  std::array<std::uint64_t, 256> freq{};
  for (std::size_t i = 0; i < n_train; ++i) ++freq[raw[i]];

  std::array<TokenId, 256> id_of;
  id_of.fill(-1);
  std::vector<std::string> tokens;
  std::vector<std::uint64_t> counts;
  for (int b = 0; b < 256; ++b) {
    if (freq[b] == 0) continue;
    id_of[b] = static_cast<TokenId>(tokens.size());
    tokens.emplace_back(1, static_cast<char>(b));
    counts.push_back(freq[b]);
  }
  std::uint64_t unknown = 0;
  for (std::size_t i = n_train; i < raw.size(); ++i) unknown += id_of[raw[i]] < 0 ? 1 : 0;
  std::optional<TokenId> unk;
  if (unknown > 0) {
    unk = static_cast<TokenId>(tokens.size());
    tokens.emplace_back(kUnknownToken);
    counts.push_back(0);
  }
  std::vector<TokenId> ids(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) ids[i] = id_of[raw[i]] < 0 ? *unk : id_of[raw[i]];
  CorpusLoad out{Vocab(VocabKind::byte, std::move(tokens), std::move(counts), unk), {}, unknown};
  out.stream = TokenStream(std::move(ids), out.vocab.size());
  return out;
}

std::string reduce_text_to_char27(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool in_run = false;
  for (unsigned char c : raw) {
    if (std::isalpha(c) && c < 0x80) {
      out.push_back(static_cast<char>(std::tolower(c)));
      in_run = false;
    } else if (!in_run) {
      out.push_back(' ');
      in_run = true;
    }
  }
  return out;
}

CorpusLoad reduce_to_char27(std::string_view raw, std::optional<std::size_t> train_len) {
  const std::string text = reduce_text_to_char27(raw);
  std::vector<std::string> tokens{" "};
  for (char c = 'a'; c <= 'z'; ++c) tokens.emplace_back(1, c);
  auto id_of = [](char c) { return c == ' ' ? TokenId{0} : static_cast<TokenId>(c - 'a' + 1); };
  std::vector<std::uint64_t> counts(27, 0);
  std::vector<TokenId> ids(text.size());
  const std::size_t n_train = train_prefix(train_len, text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    ids[i] = id_of(text[i]);
    if (i < n_train) ++counts[static_cast<std::size_t>(ids[i])];
  }
  CorpusLoad out{Vocab(VocabKind::char27, std::move(tokens), std::move(counts), std::nullopt), {}, 0};
  out.stream = TokenStream(std::move(ids), 27);
  return out;
}

namespace {

std::vector<std::string_view> split_words(std::string_view raw) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < raw.size()) {
    while (i < raw.size() && std::isspace(static_cast<unsigned char>(raw[i]))) ++i;
    const std::size_t start = i;
    while (i < raw.size() && !std::isspace(static_cast<unsigned char>(raw[i]))) ++i;
    if (i > start) words.push_back(raw.substr(start, i - start));
  }
  return words;
}

}  // namespace

CorpusLoad build_word_stream(std::string_view raw, std::size_t vocab_limit,
                             std::optional<std::size_t> train_len) {
  if (vocab_limit < 1) throw ConfigError("data.vocab_limit: must be at least 1");
  const auto words = split_words(raw);
  const std::size_t n_train = train_prefix(train_len, words.size());
  std::map<std::string_view, std::uint64_t> freq;
  for (std::size_t i = 0; i < n_train; ++i) {
    if (words[i] != kUnknownToken) ++freq[words[i]];
  }
  std::vector<std::pair<std::string_view, std::uint64_t>> ranked(freq.begin(), freq.end());
  // std::map iteration is lexicographic, so a stable sort on count keeps the tie rule.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > vocab_limit) ranked.resize(vocab_limit);

  std::vector<std::string> tokens;
  std::vector<std::uint64_t> counts;
  for (const auto& [w, c] : ranked) {
    tokens.emplace_back(w);
    counts.push_back(c);
  }
  const auto unk = static_cast<TokenId>(tokens.size());
  tokens.emplace_back(kUnknownToken);
  counts.push_back(0);
  Vocab vocab(VocabKind::word, std::move(tokens), std::move(counts), unk);

  std::vector<TokenId> ids(words.size());
  std::uint64_t unknown_train = 0;
  std::uint64_t unknown_eval = 0;
  for (std::size_t i = 0; i < words.size(); ++i) {
    auto id = vocab.find(words[i]);
    ids[i] = id ? *id : unk;
    if (ids[i] == unk) (i < n_train ? unknown_train : unknown_eval) += 1;
  }
  auto counts_with_unk = vocab.counts();
  counts_with_unk.back() = unknown_train;
  CorpusLoad out{Vocab(VocabKind::word, vocab.tokens(), std::move(counts_with_unk), unk), {}, unknown_eval};
  out.stream = TokenStream(std::move(ids), out.vocab.size());
  return out;
}

std::size_t symbol_count(VocabKind kind, std::string_view raw) {
  switch (kind) {
    case VocabKind::byte: return raw.size();
    case VocabKind::char27: return reduce_text_to_char27(raw).size();
    case VocabKind::word: return split_words(raw).size();
  }
  return 0;
}

SplitSizes split_sizes(std::size_t total, const SplitFractions& f) {
  if (!(f.train > 0.0 && f.valid > 0.0 && f.test > 0.0)) {
    throw ConfigError("data.fractions: every fraction must be positive");
  }
  if (std::abs(f.train + f.valid + f.test - 1.0) > 1e-9) {
    throw ConfigError("data.fractions: fractions must sum to 1");
  }
  // The small slack absorbs representation error such as 0.29 * 100 = 28.999...
  auto cut = [&](double frac) {
    return static_cast<std::size_t>(std::floor(frac * static_cast<double>(total) + 1e-9));
  };
  SplitSizes s;
  s.train = cut(f.train);
  s.valid = cut(f.valid);
  if (s.train + s.valid >= total || s.train == 0 || s.valid == 0) {
    throw DataError("split: " + std::to_string(total) + " tokens cannot give every split at least one token");
  }
  s.test = total - s.train - s.valid;
  return s;
}

SplitStreams split_fractions(const TokenStream& stream, const SplitFractions& fractions) {
  const SplitSizes s = split_sizes(stream.size(), fractions);
  return {stream.slice(0, s.train, Split::train), stream.slice(s.train, s.valid, Split::valid),
          stream.slice(s.train + s.valid, s.test, Split::test)};
}

PreparedCorpus prepare_corpus(VocabKind kind, std::string_view raw, const SplitFractions& fractions,
                              std::size_t vocab_limit) {
  const std::size_t total = symbol_count(kind, raw);
  const SplitSizes sizes = split_sizes(total, fractions);
  CorpusLoad load;
  switch (kind) {
    case VocabKind::byte:
      load = load_byte_corpus({reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()}, sizes.train);
      break;
    case VocabKind::char27: load = reduce_to_char27(raw, sizes.train); break;
    case VocabKind::word: load = build_word_stream(raw, vocab_limit, sizes.train); break;
  }
  return {std::move(load.vocab), split_fractions(load.stream, fractions), load.unknown_count};
}

std::string detokenize(const Vocab& vocab, std::span<const TokenId> ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (vocab.kind() == VocabKind::word && i > 0) out.push_back(' ');
    out += vocab.token(ids[i]);
  }
  return out;
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void validate(const RepetitionCorpusSpec& s) {
  if (s.vocab_size < 2) throw ConfigError("repetition.vocab_size: must be at least 2");
  if (s.n_patterns < 1) throw ConfigError("repetition.n_patterns: must be at least 1");
  if (s.pattern_len < 2) throw ConfigError("repetition.pattern_len: must be at least 2");
  if (!(s.background_entropy >= 0.0 && s.background_entropy < 1.0)) {
    throw ConfigError("repetition.background_entropy: must lie in [0, 1)");
  }
  if (s.length < 1) throw ConfigError("repetition.length: must be positive");
  if (s.document_len != 0 && s.document_len < s.pattern_len) {
    throw ConfigError("repetition.document_len: shorter than one pattern");
  }
}

}  // namespace

std::vector<std::vector<TokenId>> repetition_patterns(const RepetitionCorpusSpec& spec, std::size_t doc) {
  validate(spec);
  std::mt19937_64 rng(mix(spec.seed, 2 * doc + 1));
  std::uniform_int_distribution<TokenId> token(0, static_cast<TokenId>(spec.vocab_size - 1));
  std::vector<std::vector<TokenId>> bank(spec.n_patterns, std::vector<TokenId>(spec.pattern_len));
  for (auto& p : bank)
    for (auto& t : p) t = token(rng);
  return bank;
}

TokenStream gen_repetition_corpus(const RepetitionCorpusSpec& spec) {
  validate(spec);
  const std::size_t doc_len = spec.document_len == 0 ? spec.length : spec.document_len;
  std::vector<TokenId> out;
  out.reserve(spec.length);
  for (std::size_t doc = 0; out.size() < spec.length; ++doc) {
    const auto bank = repetition_patterns(spec, doc);
    std::mt19937_64 rng(mix(spec.seed, 2 * doc + 2));
    std::uniform_int_distribution<TokenId> token(0, static_cast<TokenId>(spec.vocab_size - 1));
    std::uniform_int_distribution<std::size_t> which(0, spec.n_patterns - 1);
    std::bernoulli_distribution background(spec.background_entropy);
    const std::size_t end = std::min(spec.length, out.size() + doc_len);
    while (out.size() < end) {
      if (background(rng)) {
        for (std::size_t i = 0; i < spec.pattern_len && out.size() < end; ++i) out.push_back(token(rng));
      } else {
        const auto& p = bank[which(rng)];
        for (std::size_t i = 0; i < p.size() && out.size() < end; ++i) out.push_back(p[i]);
      }
    }
  }
  return TokenStream(std::move(out), spec.vocab_size);
}

std::vector<std::span<const TokenId>> segment_iter(std::span<const TokenId> stream, std::size_t segment_len) {
  if (segment_len < 1) throw ConfigError("segment_len: must be at least 1");
  std::vector<std::span<const TokenId>> segments;
  for (std::size_t i = 0; i < stream.size(); i += segment_len) {
    segments.push_back(stream.subspan(i, std::min(segment_len, stream.size() - i)));
  }
  return segments;
}

namespace {
constexpr std::string_view kStreamMagic = "DETS1";
constexpr std::string_view kVocabHeader = "#dynxl-vocab";
}  // namespace

void write_stream(const std::filesystem::path& path, const TokenStream& stream) {
  io::ByteWriter w;
  w.raw(kStreamMagic);
  w.u32(static_cast<std::uint32_t>(stream.vocab_size()));
  w.u64(stream.size());
  w.u8(static_cast<std::uint8_t>(stream.split()));
  for (TokenId t : stream.ids()) w.u32(static_cast<std::uint32_t>(t));
  io::write_file_atomic(path, w.buffer());
}

TokenStream read_stream(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes);
  if (r.raw(kStreamMagic.size()) != kStreamMagic) throw DataError(path.string() + ": not a token stream file");
  const std::size_t vocab_size = r.u32();
  const std::uint64_t count = r.u64();
  const auto split = r.u8();
  if (split > static_cast<std::uint8_t>(Split::test)) throw DataError(path.string() + ": bad split label");
  if (r.remaining() != count * 4) throw DataError(path.string() + ": token count does not match file size");
  std::vector<TokenId> ids(count);
  for (auto& t : ids) t = static_cast<TokenId>(r.u32());
  return TokenStream(std::move(ids), vocab_size, static_cast<Split>(split));
}

namespace {

std::string escape_token(std::string_view token) {
  std::string out;
  for (unsigned char c : token) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default:
        if (c < 0x20 || c >= 0x7f) {
          static const char* hex = "0123456789abcdef";
          out += "\\x";
          out.push_back(hex[c >> 4]);
          out.push_back(hex[c & 15]);
        } else {
          out.push_back(static_cast<char>(c));
        }
    }
  }
  return out;
}

std::string unescape_token(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out.push_back(s[i]);
      continue;
    }
    if (++i >= s.size()) throw DataError("vocab: dangling escape");
    switch (s[i]) {
      case '\\': out.push_back('\\'); break;
      case 't': out.push_back('\t'); break;
      case 'n': out.push_back('\n'); break;
      case 'r': out.push_back('\r'); break;
      case 'x': {
        if (i + 2 >= s.size()) throw DataError("vocab: short hex escape");
        out.push_back(static_cast<char>(std::stoi(std::string(s.substr(i + 1, 2)), nullptr, 16)));
        i += 2;
        break;
      }
      default: throw DataError("vocab: unknown escape");
    }
  }
  return out;
}

}  // namespace

std::string format_vocab(const Vocab& vocab) {
  std::ostringstream os;
  os << kVocabHeader << '\t' << to_string(vocab.kind()) << '\t'
     << (vocab.unknown_id() ? *vocab.unknown_id() : -1) << '\n';
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    os << escape_token(vocab.tokens()[i]) << '\t' << i << '\t' << vocab.counts()[i] << '\n';
  }
  return os.str();
}

Vocab parse_vocab(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw DataError("vocab: empty file");
  std::istringstream header(line);
  std::string magic, kind;
  long unk = -1;
  if (!(header >> magic >> kind >> unk) || magic != kVocabHeader) throw DataError("vocab: bad header");
  std::vector<std::string> tokens;
  std::vector<std::uint64_t> counts;
  while (std::getline(in, line)) {
    const auto t1 = line.find('\t');
    const auto t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos) throw DataError("vocab: malformed line");
    if (std::stoul(line.substr(t1 + 1, t2 - t1 - 1)) != tokens.size()) throw DataError("vocab: ids not dense");
    tokens.push_back(unescape_token(std::string_view(line).substr(0, t1)));
    counts.push_back(std::stoull(line.substr(t2 + 1)));
  }
  std::optional<TokenId> unknown;
  if (unk >= 0) unknown = static_cast<TokenId>(unk);
  return Vocab(vocab_kind_from_string(kind), std::move(tokens), std::move(counts), unknown);
}

void write_vocab(const std::filesystem::path& path, const Vocab& vocab) {
  io::write_text_atomic(path, format_vocab(vocab));
}

Vocab read_vocab(const std::filesystem::path& path) { return parse_vocab(io::read_text_file(path)); }

}  // namespace dynxl
