#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <utility>

#include "dynxl/binary_io.hpp"
#include "dynxl/checkpoint.hpp"
#include "dynxl/data.hpp"
#include "dynxl/dyneval.hpp"
#include "dynxl/errors.hpp"
#include "dynxl/eval_report.hpp"
#include "dynxl/harness.hpp"
#include "dynxl/run_config.hpp"

namespace fs = std::filesystem;

namespace dynxl::cli {

namespace {

// Raised for rms evaluation or tuning against a checkpoint without stats.
class MissingStats : public Error {
 public:
  using Error::Error;
};

struct Prepared {
  Vocab vocab;
  TokenStream train, valid, test;
  std::string fingerprint;

  const TokenStream& split(Split s) const {
    switch (s) {
      case Split::train: return train;
      case Split::valid: return valid;
      default: return test;
    }
  }
};

fs::path stream_path(const fs::path& dir, Split split) { return dir / (std::string(to_string(split)) + ".bin"); }

std::string vocab_fingerprint(const Vocab& vocab) { return io::hex64(vocab.fingerprint()); }

// Reads the vocabulary plus only the requested splits; tuning never opens
// the test stream.
Prepared load_prepared(const RunConfig& rc, std::initializer_list<Split> needed) {
  const fs::path dir = rc.data_dir;
  if (!fs::exists(dir / "vocab.tsv")) {
    throw DataError("no prepared data in '" + dir.string() + "' (run prep first)");
  }
  Prepared p;
  p.vocab = read_vocab(dir / "vocab.tsv");
  for (Split s : needed) {
    TokenStream stream = read_stream(stream_path(dir, s));
    if (stream.split() != s || stream.vocab_size() != p.vocab.size()) {
      throw DataError(stream_path(dir, s).string() + ": does not match the prepared vocabulary or split");
    }
    (s == Split::train ? p.train : s == Split::valid ? p.valid : p.test) = std::move(stream);
  }
  p.fingerprint = vocab_fingerprint(p.vocab);
  return p;
}

Checkpoint load_checked(const RunConfig& rc, const Prepared& data) {
  const fs::path path = rc.checkpoint_path();
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path.string());
  Checkpoint ck = load_checkpoint(path);
  require_vocab(ck, data.fingerprint);
  return ck;
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

// Wall-clock times go to this sidecar only, so every other output is a
// pure function of the inputs.
void log_event(const RunConfig& rc, const std::string& what) {
  fs::create_directories(rc.output_dir);
  std::ofstream(fs::path(rc.output_dir) / "run.log", std::ios::app) << timestamp() << '\t' << what << '\n';
}

std::uint64_t count_unknown(const Vocab& vocab, const TokenStream& stream) {
  if (!vocab.unknown_id()) return 0;
  const TokenId unk = *vocab.unknown_id();
  return static_cast<std::uint64_t>(std::count(stream.ids().begin(), stream.ids().end(), unk));
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

int cmd_prep(const RunConfig& rc, std::ostream& out) {
  PreparedCorpus corpus;
  if (rc.data_source == DataSource::file) {
    if (rc.data_input.empty()) throw ConfigError("data.input: required for prep");
    if (!fs::is_regular_file(rc.data_input)) throw DataError("cannot read input file '" + rc.data_input + "'");
    const std::string raw = io::read_text_file(rc.data_input);
    corpus = prepare_corpus(rc.data_kind, raw, rc.fractions, rc.vocab_limit);
  } else {
    const TokenStream all = gen_repetition_corpus(rc.repetition);
    corpus.splits = split_fractions(all, rc.fractions);
    std::vector<std::string> tokens;
    std::vector<std::uint64_t> counts(rc.repetition.vocab_size, 0);
    for (std::size_t i = 0; i < rc.repetition.vocab_size; ++i) tokens.push_back("t" + std::to_string(i));
    for (TokenId id : corpus.splits.train.ids()) ++counts[static_cast<std::size_t>(id)];
    corpus.vocab = Vocab(VocabKind::word, std::move(tokens), std::move(counts), std::nullopt);
  }
  const fs::path dir = rc.data_dir;
  fs::create_directories(dir);
  write_stream(stream_path(dir, Split::train), corpus.splits.train);
  write_stream(stream_path(dir, Split::valid), corpus.splits.valid);
  write_stream(stream_path(dir, Split::test), corpus.splits.test);
  write_vocab(dir / "vocab.tsv", corpus.vocab);
  out << "vocab_size " << corpus.vocab.size() << '\n'
      << "train " << corpus.splits.train.size() << '\n'
      << "valid " << corpus.splits.valid.size() << '\n'
      << "test " << corpus.splits.test.size() << '\n'
      << "unknown " << corpus.unknown_count << '\n'
      << "fingerprint " << vocab_fingerprint(corpus.vocab) << '\n';
  return kOk;
}

int cmd_train(RunConfig rc, std::ostream& out, std::ostream& err) {
  const Prepared data = load_prepared(rc, {Split::train, Split::valid});
  if (rc.model.vocab_size == 0) rc.model.vocab_size = data.vocab.size();
  if (rc.model.vocab_size != data.vocab.size()) {
    throw ConfigError("model.vocab_size: " + std::to_string(rc.model.vocab_size) + " does not match the data (" +
                      std::to_string(data.vocab.size()) + ")");
  }
  if (rc.model.output_layer == OutputLayer::adaptive) rc.model.cluster_order = frequency_order(data.vocab.counts());
  rc.model.validate();
  rc.train.validate();

  fs::create_directories(rc.output_dir);
  io::write_text_atomic(fs::path(rc.output_dir) / "train.conf", format_run_config(rc));
  log_event(rc, "train start");

  const fs::path ckpt_path = rc.checkpoint_path();
  auto save_best = [&](const ModelParams& params, std::size_t step, double bits) {
    Checkpoint ck;
    ck.params = params;
    ck.vocab_fingerprint = data.fingerprint;
    ck.seed = rc.train.seed;
    ck.steps = step;
    save_checkpoint(ckpt_path, ck);
    out << "checkpoint step " << step << " valid_bits " << fmt("%.6f", bits) << '\n';
  };
  TrainResult result;
  try {
    result = train(rc.model, rc.train, data.train, data.valid, save_best);
  } catch (const DivergenceError& e) {
    log_event(rc, "train diverged");
    err << "error: " << e.what() << "; last good checkpoint kept at " << ckpt_path.string() << '\n';
    return kFailure;
  }

  std::ostringstream curve;
  curve << "step\ttrain_loss\tvalid_bits\n";
  for (const auto& p : result.curve) {
    curve << p.step << '\t' << fmt("%.17g", p.train_loss) << '\t'
          << (p.valid_bits ? fmt("%.17g", *p.valid_bits) : std::string("-")) << '\n';
  }
  io::write_text_atomic(fs::path(rc.output_dir) / "train_metrics.tsv", curve.str());
  log_event(rc, "train done");
  out << "best step " << result.best_step << " valid_bits " << fmt("%.6f", result.best_valid_bits) << '\n';
  return kOk;
}

int cmd_collect_stats(const RunConfig& rc, std::ostream& out) {
  const Prepared data = load_prepared(rc, {Split::train});
  Checkpoint ck = load_checked(rc, data);
  ck.stats = collect_grad_stats(ck.params, data.train, rc.dyneval.segment_len, rc.stats_max_segments);
  save_checkpoint(rc.checkpoint_path(), ck);
  log_event(rc, "collect-stats");
  out << "segments " << ck.stats->segments << " mean_rms " << fmt("%.6g", ck.stats->global_mean) << '\n';
  return kOk;
}

DynevalConfig mode_config(const RunConfig& rc, EvalMode mode) {
  DynevalConfig c = rc.dyneval;
  c.optimizer = mode == EvalMode::rms ? OptimizerKind::rms_decay : OptimizerKind::sgd;
  if (c.optimizer == OptimizerKind::sgd) c.decay_rate = 0.0;
  return c;
}

void require_stats(const Checkpoint& ck) {
  if (!ck.stats) {
    throw MissingStats("checkpoint has no gradient statistics; run `dynxl collect-stats` on it first");
  }
}

int cmd_eval(const RunConfig& rc, std::ostream& out) {
  const Prepared data = load_prepared(rc, {rc.eval_split});
  Checkpoint ck = load_checked(rc, data);
  if (rc.eval_mode == EvalMode::rms) require_stats(ck);
  const TokenStream& stream = data.split(rc.eval_split);

  EvalReport report;
  if (rc.eval_mode == EvalMode::static_) {
    report = static_eval(ck.params, stream, rc.dyneval.segment_len);
  } else {
    AdaptState state(std::move(ck.params), std::move(ck.stats));
    report = dynamic_eval(state, stream, mode_config(rc, rc.eval_mode));
  }
  report.name = rc.output_name.empty() ? to_string(rc.eval_mode) : rc.output_name;
  report.vocab_fingerprint = data.fingerprint;
  report.unknown_tokens = count_unknown(data.vocab, stream);

  const fs::path base = fs::path(rc.output_dir) / report.name;
  fs::create_directories(rc.output_dir);
  write_report(base.string() + ".report", report);
  write_token_dump(base.string() + ".tokens", report.token_nats);
  log_event(rc, "eval " + report.name);
  out << report.name << " tokens " << report.token_count << " bits_per_token " << fmt("%.6f", report.bits_per_token())
      << " perplexity " << fmt("%.4f", report.perplexity()) << '\n';
  return kOk;
}

int cmd_tune(const RunConfig& rc, std::ostream& out) {
  const Prepared data = load_prepared(rc, {Split::valid});
  Checkpoint ck = load_checked(rc, data);
  if (rc.dyneval.optimizer == OptimizerKind::rms_decay) require_stats(ck);
  TokenStream valid = data.valid;
  if (rc.tune_eval_tokens > 0 && rc.tune_eval_tokens < valid.size()) {
    valid = valid.slice(0, rc.tune_eval_tokens, Split::valid);
  }
  auto trained = std::make_shared<const ModelParams>(std::move(ck.params));
  const TuneResult result = tune_dyneval(trained, ck.stats, valid, rc.tune_grid());

  std::ostringstream table;
  table << "learning_rate\tdecay_rate\tvalid_bits\n";
  for (std::size_t i = 0; i < result.grid.size(); ++i) {
    table << fmt("%.6g", result.grid[i].learning_rate) << '\t' << fmt("%.6g", result.grid[i].decay_rate) << '\t'
          << (result.failures[i].empty() ? fmt("%.17g", result.reports[i].bits_per_token()) : std::string("diverged"))
          << '\n';
  }
  const std::string kind = to_string(rc.dyneval.optimizer);
  fs::create_directories(rc.output_dir);
  io::write_text_atomic(fs::path(rc.output_dir) / ("tune_" + kind + ".tsv"), table.str());

  const DynevalConfig& best = result.best();
  RunConfig tuned;
  tuned.dyneval = best;
  std::ostringstream conf;
  for (const auto& key : run_config_keys()) {
    if (key.starts_with("dyneval.")) conf << key << " = " << get_run_config_value(tuned, key) << '\n';
  }
  io::write_text_atomic(fs::path(rc.output_dir) / ("tuned_" + kind + ".conf"), conf.str());
  log_event(rc, "tune " + kind);
  out << table.str() << "best learning_rate " << fmt("%.6g", best.learning_rate) << " decay_rate "
      << fmt("%.6g", best.decay_rate) << " valid_bits "
      << fmt("%.6f", result.reports[result.best_index].bits_per_token()) << '\n';
  return kOk;
}

int cmd_report(const std::vector<std::string>& paths, const std::string& metric, const std::string& baseline,
               const std::string& format, std::ostream& out) {
  std::vector<EvalReport> reports;
  for (const auto& p : paths) {
    if (!fs::is_regular_file(p)) throw DataError("cannot read report '" + p + "'");
    reports.push_back(read_report(p));
  }
  const ComparisonTable table = compare_table(reports, metric_from_string(metric), baseline);
  if (format == "csv") {
    out << table.to_csv();
  } else if (format == "text") {
    out << table.to_text();
  } else {
    throw ConfigError("report.format: expected text or csv, got '" + format + "'");
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dynamic evaluation of segment-recurrent transformer language models", "dynxl"};
  app.require_subcommand(1);

  std::vector<std::string> config_files;
  std::vector<std::pair<std::string, std::string>> overrides;
  std::vector<CLI::App*> run_commands;
  auto add_run_command = [&](const char* name, const char* help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_files, "Config file(s) of `key = value` lines, applied in order");
    for (const auto& key : run_config_keys()) {
      sub->add_option_function<std::string>(
          "--" + key, [&overrides, key](const std::string& v) { overrides.emplace_back(key, v); },
          "Overrides " + key);
    }
    run_commands.push_back(sub);
    return sub;
  };
  CLI::App* prep = add_run_command("prep", "Tokenize and split a corpus into stream files");
  CLI::App* train_cmd = add_run_command("train", "Train a model; keeps the best validation checkpoint");
  CLI::App* stats = add_run_command("collect-stats", "Embed gradient statistics from training data");
  CLI::App* eval = add_run_command("eval", "Evaluate statically or with dynamic evaluation");
  CLI::App* tune = add_run_command("tune", "Grid-search dynamic evaluation settings on validation data");

  std::vector<std::string> report_paths;
  std::string metric = "bpc", baseline, format = "text";
  CLI::App* report = app.add_subcommand("report", "Compare evaluation reports");
  report->add_option("reports", report_paths, "Report files")->required();
  report->add_option("--metric", metric, "bpc or ppl");
  report->add_option("--baseline", baseline, "Name of the baseline report (default: first)");
  report->add_option("--format", format, "text or csv");

  std::vector<std::string> argv_store{"dynxl"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.back()->help());
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kBadInput;
  }

  try {
    if (report->parsed()) return cmd_report(report_paths, metric, baseline, format, out);

    RunConfig rc;
    for (const auto& path : config_files) {
      if (!fs::is_regular_file(path)) throw ConfigError("cannot read config file '" + path + "'");
      rc = parse_run_config(io::read_text_file(path), rc);
    }
    for (const auto& [key, value] : overrides) set_run_config_value(rc, key, value);

    if (prep->parsed()) return cmd_prep(rc, out);
    if (train_cmd->parsed()) return cmd_train(rc, out, err);
    if (stats->parsed()) return cmd_collect_stats(rc, out);
    if (eval->parsed()) return cmd_eval(rc, out);
    if (tune->parsed()) return cmd_tune(rc, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kBadInput;
  } catch (const DataError& e) {
    err << "input error: " << e.what() << '\n';
    return kBadInput;
  } catch (const FingerprintError& e) {
    err << "error: " << e.what() << '\n';
    return kFingerprintMismatch;
  } catch (const MissingStats& e) {
    err << "error: " << e.what() << '\n';
    return kMissingStats;
  } catch (const ComparisonError& e) {
    err << "error: " << e.what() << '\n';
    return kReportMismatch;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}

}  // namespace dynxl::cli
