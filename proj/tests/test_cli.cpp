#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "dynxl/binary_io.hpp"
#include "dynxl/checkpoint.hpp"
#include "dynxl/eval_report.hpp"

namespace fs = std::filesystem;
using namespace dynxl;
using cli::ExitCode;

namespace {

struct Outcome {
  int code = 0;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Outcome o;
  o.code = cli::run(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::vector<std::string> operator+(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// A per-test scratch directory with an "abab..." corpus.
struct Workspace {
  fs::path root;
  Workspace(const std::string& name) : root(fs::temp_directory_path() / ("dynxl_cli_" + name)) {
    fs::remove_all(root);
    fs::create_directories(root);
    std::string text;
    for (int i = 0; i < 1000; ++i) text += "ab";
    write("abab.txt", text);
  }
  ~Workspace() { fs::remove_all(root); }
  std::string path(const std::string& rel) const { return (root / rel).string(); }
  void write(const std::string& rel, const std::string& text) const { std::ofstream(root / rel, std::ios::binary) << text; }
  std::string read(const std::string& rel) const { return io::read_text_file(root / rel); }
};

const std::vector<std::string> kSmallModel = {
    "--model.n_layers", "0", "--model.d_model", "8", "--model.n_heads",  "1", "--model.d_head", "8",
    "--model.d_ff",     "8", "--model.segment_len", "8", "--model.mem_len", "0"};

std::vector<std::string> run_flags(const Workspace& w, const std::string& data, const std::string& out) {
  return std::vector<std::string>{"--data.dir", w.path(data), "--output.dir", w.path(out)} + kSmallModel;
}

Outcome prep_abab(const Workspace& w, const std::string& data = "data") {
  return run({"prep", "--data.input", w.path("abab.txt"), "--data.dir", w.path(data)});
}

Outcome train_small(const Workspace& w, const std::string& data, const std::string& out) {
  return run(std::vector<std::string>{"train"} + run_flags(w, data, out) +
             std::vector<std::string>{"--train.steps", "40", "--train.eval_interval", "20", "--train.warmup_steps",
                                      "5", "--train.batch_size", "2", "--train.learning_rate", "0.03"});
}

std::string without_lines(const std::string& text, std::initializer_list<std::string> prefixes) {
  std::istringstream in(text);
  std::string line, out;
  while (std::getline(in, line)) {
    bool skip = false;
    for (const auto& p : prefixes) skip = skip || line.starts_with(p);
    if (!skip) out += line + '\n';
  }
  return out;
}

}  // namespace

TEST_CASE("prep") {
  Workspace w("prep");
  const Outcome o = prep_abab(w);
  REQUIRE(o.code == ExitCode::kOk);
  CHECK(o.out.find("vocab_size 2") != std::string::npos);
  for (const char* f : {"data/train.bin", "data/valid.bin", "data/test.bin", "data/vocab.tsv"}) CHECK(fs::exists(w.root / f));
  CHECK(read_stream(w.root / "data/train.bin").size() == 1800);
  CHECK(read_stream(w.root / "data/test.bin").size() == 100);

  w.write("mixed.txt", "The Quick Brown Fox, jumps over 12 lazy dogs! Zebras YAK quietly; Wolves hunt vexing xenops.");
  const Outcome c27 = run({"prep", "--data.kind", "char27", "--data.input", w.path("mixed.txt"), "--data.dir", w.path("c27")});
  REQUIRE(c27.code == ExitCode::kOk);
  CHECK(read_vocab(w.root / "c27/vocab.tsv").size() == 27);

  const Outcome missing = run({"prep", "--data.input", w.path("nope.txt"), "--data.dir", w.path("none")});
  CHECK(missing.code == ExitCode::kBadInput);
  CHECK_FALSE(fs::exists(w.root / "none"));

  w.write("tiny.txt", "ab");
  const Outcome tiny = run({"prep", "--data.input", w.path("tiny.txt"), "--data.dir", w.path("tiny")});
  CHECK(tiny.code == ExitCode::kBadInput);
  CHECK_FALSE(fs::exists(w.root / "tiny/train.bin"));

  const Outcome bad_key = run({"prep", "--data.bogus", "1"});
  CHECK(bad_key.code == ExitCode::kBadInput);
  CHECK(bad_key.err.find("data.bogus") != std::string::npos);

  const Outcome bad_value = run({"prep", "--data.train_fraction", "lots"});
  CHECK(bad_value.code == ExitCode::kBadInput);
  CHECK(bad_value.err.find("data.train_fraction") != std::string::npos);

  const Outcome again = prep_abab(w, "data2");
  CHECK(w.read("data/vocab.tsv") == w.read("data2/vocab.tsv"));
  CHECK(io::read_file(w.root / "data/train.bin") == io::read_file(w.root / "data2/train.bin"));
}

TEST_CASE("config files and overrides") {
  Workspace w("config");
  w.write("a.conf", "data.input = " + w.path("abab.txt") + "\ndata.dir = " + w.path("wrong") + "\n");
  w.write("b.conf", "data.dir = " + w.path("right") + "\n");
  CHECK(run({"prep", "--config", w.path("a.conf"), "--config", w.path("b.conf")}).code == ExitCode::kOk);
  CHECK(fs::exists(w.root / "right/vocab.tsv"));
  CHECK_FALSE(fs::exists(w.root / "wrong"));
  CHECK(run({"prep", "--config", w.path("a.conf"), "--data.dir", w.path("flag")}).code == ExitCode::kOk);
  CHECK(fs::exists(w.root / "flag/vocab.tsv"));
  CHECK(run({"prep", "--config", w.path("missing.conf")}).code == ExitCode::kBadInput);
  w.write("bad.conf", "model.colour = blue\n");
  const Outcome bad = run({"prep", "--config", w.path("bad.conf")});
  CHECK(bad.code == ExitCode::kBadInput);
  CHECK(bad.err.find("model.colour") != std::string::npos);
}

TEST_CASE("help") {
  const Outcome top = run({"--help"});
  CHECK(top.code == ExitCode::kOk);
  CHECK(top.out.find("collect-stats") != std::string::npos);
  const Outcome sub = run({"eval", "--help"});
  CHECK(sub.code == ExitCode::kOk);
  CHECK(sub.out.find("--model.d_model") != std::string::npos);
  CHECK(run({"frobnicate"}).code == ExitCode::kBadInput);
}

TEST_CASE("train, collect-stats, eval, tune, report") {
  Workspace w("pipeline");
  REQUIRE(prep_abab(w).code == ExitCode::kOk);
  const Outcome t = train_small(w, "data", "run");
  REQUIRE(t.code == ExitCode::kOk);
  CHECK(fs::exists(w.root / "run/model.ckpt"));
  CHECK(fs::exists(w.root / "run/train_metrics.tsv"));
  CHECK(fs::exists(w.root / "run/run.log"));

  SUBCASE("training is reproducible") {
    REQUIRE(train_small(w, "data", "run2").code == ExitCode::kOk);
    CHECK(io::read_file(w.root / "run/model.ckpt") == io::read_file(w.root / "run2/model.ckpt"));
    CHECK(w.read("run/train_metrics.tsv") == w.read("run2/train_metrics.tsv"));
    CHECK(without_lines(w.read("run/train.conf"), {"output.dir"}) ==
          without_lines(w.read("run2/train.conf"), {"output.dir"}));
  }

  const auto flags = run_flags(w, "data", "run");
  SUBCASE("rms needs statistics") {
    const Outcome o = run(std::vector<std::string>{"eval", "--eval.mode", "rms"} + flags);
    CHECK(o.code == ExitCode::kMissingStats);
    CHECK(o.err.find("collect-stats") != std::string::npos);
    CHECK(run(std::vector<std::string>{"tune", "--dyneval.optimizer", "rms_decay"} + flags).code ==
          ExitCode::kMissingStats);
  }

  SUBCASE("collect-stats keeps the parameters and is idempotent") {
    const Checkpoint before = load_checkpoint(w.root / "run/model.ckpt");
    REQUIRE(run(std::vector<std::string>{"collect-stats", "--stats.max_segments", "5"} + flags).code == ExitCode::kOk);
    const auto first = io::read_file(w.root / "run/model.ckpt");
    const Checkpoint after = decode_checkpoint(first);
    REQUIRE(after.stats);
    CHECK(after.stats->segments == 5);
    CHECK(bit_equal(after.params.tensors, before.params.tensors));
    REQUIRE(run(std::vector<std::string>{"collect-stats", "--stats.max_segments", "5"} + flags).code == ExitCode::kOk);
    CHECK(io::read_file(w.root / "run/model.ckpt") == first);

    const Outcome rms = run(std::vector<std::string>{"eval", "--eval.mode", "rms", "--dyneval.learning_rate", "1e-3"} + flags);
    CHECK(rms.code == ExitCode::kOk);
    CHECK(fs::exists(w.root / "run/rms.report"));
  }

  SUBCASE("sgd with zero learning rate reproduces the static report") {
    REQUIRE(run(std::vector<std::string>{"eval"} + flags).code == ExitCode::kOk);
    REQUIRE(run(std::vector<std::string>{"eval", "--eval.mode", "sgd", "--dyneval.learning_rate", "0"} + flags).code ==
            ExitCode::kOk);
    const std::string a = w.read("run/static.report"), b = w.read("run/sgd.report");
    CHECK(a != b);
    CHECK(without_lines(a, {"name", "config_fingerprint"}) == without_lines(b, {"name", "config_fingerprint"}));
    CHECK(io::read_file(w.root / "run/static.tokens") == io::read_file(w.root / "run/sgd.tokens"));

    const std::string static_first = w.read("run/static.report");
    REQUIRE(run(std::vector<std::string>{"eval"} + flags).code == ExitCode::kOk);
    CHECK(w.read("run/static.report") == static_first);

    REQUIRE(run(std::vector<std::string>{"eval", "--eval.mode", "sgd", "--dyneval.learning_rate", "0.01",
                                         "--output.name", "sgd_fast"} + flags).code == ExitCode::kOk);
    const Outcome rep = run({"report", w.path("run/static.report"), w.path("run/sgd_fast.report")});
    CHECK(rep.code == ExitCode::kOk);
    CHECK(rep.out.find("improvement") != std::string::npos);
    const Outcome csv = run({"report", "--format", "csv", "--metric", "ppl", w.path("run/static.report")});
    CHECK(csv.code == ExitCode::kOk);
    CHECK(csv.out.find("static,") != std::string::npos);

    EvalReport other = read_report(w.root / "run/sgd_fast.report");
    other.vocab_fingerprint = "0000000000000000";
    write_report(w.root / "run/other.report", other);
    CHECK(run({"report", w.path("run/static.report"), w.path("run/other.report")}).code == ExitCode::kReportMismatch);
    CHECK(run({"report", w.path("run/static.report"), "--baseline", "nobody"}).code == ExitCode::kReportMismatch);
    CHECK(run({"report", w.path("run/absent.report")}).code == ExitCode::kBadInput);
  }

  SUBCASE("fingerprint mismatch") {
    w.write("abc.txt", std::string(300, 'a') + std::string(300, 'b') + std::string(300, 'c'));
    REQUIRE(run({"prep", "--data.input", w.path("abc.txt"), "--data.dir", w.path("abc")}).code == ExitCode::kOk);
    const auto other = run_flags(w, "abc", "run");
    CHECK(run(std::vector<std::string>{"eval"} + other).code == ExitCode::kFingerprintMismatch);
    CHECK(run(std::vector<std::string>{"collect-stats"} + other).code == ExitCode::kFingerprintMismatch);
  }

  SUBCASE("tune writes the table and best config from validation data only") {
    // With the test stream gone, tuning must still work.
    fs::remove(w.root / "data/test.bin");
    const Outcome o = run(std::vector<std::string>{"tune", "--tune.learning_rates", "0,0.01,0.1"} + flags);
    REQUIRE(o.code == ExitCode::kOk);
    CHECK(fs::exists(w.root / "run/tune_sgd.tsv"));
    const std::string conf = w.read("run/tuned_sgd.conf");
    CHECK(conf.find("dyneval.learning_rate") != std::string::npos);
    // The tuned settings feed straight into eval, which does need the test stream.
    CHECK(run(std::vector<std::string>{"eval", "--config", w.path("run/tuned_sgd.conf")} + flags).code ==
          ExitCode::kBadInput);
    CHECK(run(std::vector<std::string>{"eval", "--eval.split", "valid", "--config", w.path("run/tuned_sgd.conf")} +
              flags).code == ExitCode::kOk);
  }
}
