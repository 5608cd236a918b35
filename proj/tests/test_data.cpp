#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "dynxl/data.hpp"
#include "dynxl/errors.hpp"

using namespace dynxl;

namespace {

std::span<const std::uint8_t> bytes_of(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

std::vector<TokenId> ids_of(const TokenStream& s) { return {s.ids().begin(), s.ids().end()}; }

std::string random_text(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> byte(0, 255);
  std::string s(n, '\0');
  for (auto& c : s) c = static_cast<char>(byte(rng));
  return s;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("dynxl_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("load_byte_corpus") {
  SUBCASE("abab") {
    const CorpusLoad c = load_byte_corpus(bytes_of("abab"));
    CHECK(c.vocab.size() == 2);
    CHECK(c.vocab.token(0) == "a");
    CHECK(c.vocab.token(1) == "b");
    CHECK(ids_of(c.stream) == std::vector<TokenId>{0, 1, 0, 1});
    CHECK(c.vocab.counts() == std::vector<std::uint64_t>{2, 2});
    CHECK_FALSE(c.vocab.unknown_id());
  }
  SUBCASE("all 256 bytes") {
    std::string s;
    for (int b = 255; b >= 0; --b) s.push_back(static_cast<char>(b));
    const CorpusLoad c = load_byte_corpus(bytes_of(s));
    CHECK(c.vocab.size() == 256);
    CHECK(c.stream.ids()[0] == 255);
  }
  SUBCASE("204 distinct bytes give 204 ids") {
    std::string s;
    for (int b = 0; b < 204; ++b) s.push_back(static_cast<char>(b + 20));
    s += s;
    CHECK(load_byte_corpus(bytes_of(s)).vocab.size() == 204);
  }
  SUBCASE("bytes unseen in training map to unknown and are counted") {
    const CorpusLoad c = load_byte_corpus(bytes_of("ababcxa"), 4);
    CHECK(c.vocab.size() == 3);
    REQUIRE(c.vocab.unknown_id());
    CHECK(*c.vocab.unknown_id() == 2);
    CHECK(c.unknown_count == 2);
    CHECK(ids_of(c.stream) == std::vector<TokenId>{0, 1, 0, 1, 2, 2, 0});
  }
  CHECK_THROWS_AS(load_byte_corpus({}), DataError);
}

TEST_CASE("reduce_to_char27") {
  CHECK(reduce_text_to_char27("Ab  C") == "ab c");
  CHECK(reduce_text_to_char27("a1!b") == "a b");
  CHECK(reduce_text_to_char27("") == "");
  const CorpusLoad c = reduce_to_char27("Hello, World");
  CHECK(c.vocab.size() == 27);
  CHECK(c.vocab.kind() == VocabKind::char27);
  CHECK(detokenize(c.vocab, c.stream.ids()) == "hello world");

  SUBCASE("only admissible symbols on 1 MB of random bytes") {
    std::mt19937_64 rng(1);
    const std::string out = reduce_text_to_char27(random_text(rng, 1 << 20));
    bool ok = true;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const char ch = out[i];
      ok = ok && ((ch >= 'a' && ch <= 'z') || ch == ' ');
      if (ch == ' ' && i > 0) ok = ok && out[i - 1] != ' ';
    }
    CHECK(ok);
  }
}

TEST_CASE("build_word_stream") {
  const CorpusLoad c = build_word_stream("a b a", 10);
  CHECK(c.vocab.size() == 3);
  CHECK(c.vocab.token(0) == "a");
  CHECK(c.vocab.token(1) == "b");
  CHECK(c.vocab.token(2) == kUnknownToken);
  CHECK(c.vocab.counts()[0] == 2);
  CHECK(c.vocab.counts()[1] == 1);

  const CorpusLoad one = build_word_stream("x y x z x y", 1);
  CHECK(one.vocab.size() == 2);
  CHECK(ids_of(one.stream) == std::vector<TokenId>{0, 1, 0, 1, 0, 1});

  const CorpusLoad tie = build_word_stream("pear apple pear apple fig", 10);
  CHECK(tie.vocab.token(0) == "apple");
  CHECK(tie.vocab.token(1) == "pear");
  CHECK(tie.vocab.token(2) == "fig");

  const CorpusLoad held = build_word_stream("a b a c", 10, 3);
  CHECK(held.unknown_count == 1);
  CHECK(held.stream.ids()[3] == *held.vocab.unknown_id());
}

TEST_CASE("split_fractions") {
  std::vector<TokenId> ids(100);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<TokenId>(i % 7);
  const TokenStream s(ids, 7);
  const SplitStreams sp = split_fractions(s, {0.9, 0.05, 0.05});
  CHECK(sp.train.size() == 90);
  CHECK(sp.valid.size() == 5);
  CHECK(sp.test.size() == 5);
  CHECK(sp.train.split() == Split::train);
  CHECK(sp.test.split() == Split::test);
  std::vector<TokenId> joined;
  for (const auto* part : {&sp.train, &sp.valid, &sp.test}) joined.insert(joined.end(), part->ids().begin(), part->ids().end());
  CHECK(joined == ids);

  const SplitSizes ten = split_sizes(10, {0.5, 0.25, 0.25});
  CHECK(ten.train == 5);
  CHECK(ten.valid == 2);
  CHECK(ten.test == 3);

  CHECK_THROWS_AS(split_sizes(2, {0.9, 0.05, 0.05}), DataError);
  CHECK_THROWS_AS(split_sizes(100, {0.9, 0.1, 0.0}), ConfigError);
  CHECK_THROWS_AS(split_sizes(100, {0.5, 0.2, 0.2}), ConfigError);
}

TEST_CASE("prepare_corpus builds the vocabulary on training data only") {
  std::string text(90, 'a');
  text += "bbbbbccccz";
  const PreparedCorpus p = prepare_corpus(VocabKind::byte, text, {0.9, 0.05, 0.05});
  CHECK(p.vocab.size() == 2);  // 'a' plus unknown
  CHECK(p.unknown_count == 10);
  CHECK(p.splits.valid.size() == 5);
}

TEST_CASE("segment_iter") {
  std::vector<TokenId> ids{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  auto segs = segment_iter(ids, 4);
  REQUIRE(segs.size() == 3);
  CHECK(segs[0].size() == 4);
  CHECK(segs[2].size() == 2);
  CHECK(segment_iter(ids, 10).size() == 1);
  CHECK(segment_iter(ids, 50).size() == 1);
  std::vector<TokenId> joined;
  for (auto seg : segs) joined.insert(joined.end(), seg.begin(), seg.end());
  CHECK(joined == ids);
  CHECK_THROWS_AS(segment_iter(ids, 0), ConfigError);

  // Segments of a split stay inside that split.
  const SplitStreams sp = split_fractions(TokenStream(ids, 10), {0.5, 0.25, 0.25});
  std::size_t total = 0;
  for (const auto* part : {&sp.train, &sp.valid, &sp.test}) {
    for (auto seg : segment_iter(part->ids(), 4)) {
      CHECK(seg.data() >= part->ids().data());
      CHECK(seg.data() + seg.size() <= part->ids().data() + part->size());
      total += seg.size();
    }
  }
  CHECK(total == ids.size());
}

TEST_CASE("detokenize round trip") {
  std::mt19937_64 rng(2);
  const std::string raw = random_text(rng, 5000);
  const CorpusLoad b = load_byte_corpus(bytes_of(raw));
  CHECK(detokenize(b.vocab, b.stream.ids()) == raw);
  const CorpusLoad again = load_byte_corpus(bytes_of(detokenize(b.vocab, b.stream.ids())));
  CHECK(ids_of(again.stream) == ids_of(b.stream));

  const std::string reduced = reduce_text_to_char27(raw);
  const CorpusLoad c = reduce_to_char27(reduced);
  CHECK(detokenize(c.vocab, c.stream.ids()) == reduced);
  CHECK(ids_of(reduce_to_char27(detokenize(c.vocab, c.stream.ids())).stream) == ids_of(c.stream));
}

TEST_CASE("ingestion is deterministic") {
  const std::string text = "the cat sat on the mat the end";
  const CorpusLoad a = build_word_stream(text, 4), b = build_word_stream(text, 4);
  CHECK(a.vocab == b.vocab);
  CHECK(ids_of(a.stream) == ids_of(b.stream));
  CHECK(a.vocab.fingerprint() == b.vocab.fingerprint());
  CHECK(a.vocab.fingerprint() != build_word_stream(text, 3).vocab.fingerprint());
}

TEST_CASE("TokenStream invariants") {
  CHECK_THROWS_AS(TokenStream({0, 3}, 3), DataError);
  CHECK_THROWS_AS(TokenStream({-1}, 3), DataError);
  const TokenStream s({0, 1, 2, 1}, 3);
  const TokenStream part = s.slice(1, 2, Split::valid);
  CHECK(ids_of(part) == std::vector<TokenId>{1, 2});
  CHECK(part.vocab_size() == 3);
  CHECK_THROWS(s.slice(3, 2, Split::valid));
}

TEST_CASE("gen_repetition_corpus") {
  RepetitionCorpusSpec spec;
  spec.seed = 7;
  spec.vocab_size = 32;
  spec.n_patterns = 4;
  spec.pattern_len = 8;
  spec.length = 4000;

  SUBCASE("no background means pure pattern copies") {
    spec.background_entropy = 0.0;
    const TokenStream s = gen_repetition_corpus(spec);
    const auto bank = repetition_patterns(spec, 0);
    for (std::size_t i = 0; i + spec.pattern_len <= s.size(); i += spec.pattern_len) {
      const std::vector<TokenId> block(s.ids().begin() + i, s.ids().begin() + i + spec.pattern_len);
      CHECK(std::find(bank.begin(), bank.end(), block) != bank.end());
    }
  }
  SUBCASE("same seed, same stream; different seed, different stream") {
    CHECK(ids_of(gen_repetition_corpus(spec)) == ids_of(gen_repetition_corpus(spec)));
    RepetitionCorpusSpec other = spec;
    other.seed = 8;
    CHECK(ids_of(gen_repetition_corpus(other)) != ids_of(gen_repetition_corpus(spec)));
  }
  SUBCASE("documents draw different banks") {
    spec.document_len = 1000;
    CHECK(repetition_patterns(spec, 0) != repetition_patterns(spec, 1));
    CHECK(gen_repetition_corpus(spec).size() == 4000);
  }
  SUBCASE("every pattern recurs at least 10 times in a 1e5 token document") {
    spec.pattern_len = 20;
    spec.n_patterns = 8;
    spec.vocab_size = 64;
    spec.length = 100000;
    spec.background_entropy = 0.5;
    const TokenStream s = gen_repetition_corpus(spec);
    for (const auto& p : repetition_patterns(spec, 0)) {
      std::size_t hits = 0;
      for (std::size_t i = 0; i + p.size() <= s.size(); ++i) {
        hits += std::equal(p.begin(), p.end(), s.ids().begin() + i) ? 1 : 0;
      }
      CHECK(hits >= 10);
    }
  }
  SUBCASE("infeasible parameters") {
    spec.pattern_len = 1;
    CHECK_THROWS_AS(gen_repetition_corpus(spec), ConfigError);
    spec.pattern_len = 8;
    spec.n_patterns = 0;
    CHECK_THROWS_AS(gen_repetition_corpus(spec), ConfigError);
    spec.n_patterns = 4;
    spec.background_entropy = 1.0;
    CHECK_THROWS_AS(gen_repetition_corpus(spec), ConfigError);
  }
}

TEST_CASE("stream and vocab files") {
  const auto dir = temp_dir("data_files");
  const PreparedCorpus p = prepare_corpus(VocabKind::byte, std::string("hello\tworld\n\\ quirks") + '\0' + "xyz",
                                          {0.8, 0.1, 0.1});
  write_stream(dir / "valid.bin", p.splits.valid);
  const TokenStream back = read_stream(dir / "valid.bin");
  CHECK(ids_of(back) == ids_of(p.splits.valid));
  CHECK(back.split() == Split::valid);
  CHECK(back.vocab_size() == p.vocab.size());

  write_vocab(dir / "vocab.tsv", p.vocab);
  CHECK(read_vocab(dir / "vocab.tsv") == p.vocab);
  CHECK(parse_vocab(format_vocab(p.vocab)) == p.vocab);

  {
    std::ofstream bad(dir / "bad.bin", std::ios::binary);
    bad << "DETS1garbage";
  }
  CHECK_THROWS_AS(read_stream(dir / "bad.bin"), DataError);
  CHECK_THROWS_AS(read_stream(dir / "missing.bin"), DataError);
  CHECK_THROWS_AS(parse_vocab("nonsense\n"), DataError);
  std::filesystem::remove_all(dir);
}
