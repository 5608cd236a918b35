#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dynxl/data.hpp"
#include "dynxl/dyneval.hpp"
#include "dynxl/harness.hpp"
#include "dynxl/model.hpp"

namespace dynxl {

enum class DataSource { file, repetition };
enum class EvalMode { static_, sgd, rms };

const char* to_string(EvalMode mode);
EvalMode eval_mode_from_string(const std::string& text);

/// Declarative description of one experiment. Serialized as flat
/// `key = value` lines with dotted namespaces; see run_config_keys().
struct RunConfig {
  DataSource data_source = DataSource::file;
  VocabKind data_kind = VocabKind::byte;
  std::string data_input;           // raw corpus for prep
  std::string data_dir = "data";    // prepared streams + vocab
  SplitFractions fractions;
  std::size_t vocab_limit = 50000;  // word vocabularies only
  RepetitionCorpusSpec repetition;

  ModelConfig model;
  TrainConfig train;
  DynevalConfig dyneval;
  std::size_t stats_max_segments = 1000;

  EvalMode eval_mode = EvalMode::static_;
  Split eval_split = Split::test;

  std::vector<double> tune_learning_rates;  // empty: default grid
  std::vector<double> tune_decay_rates;
  std::size_t tune_eval_tokens = 0;         // validation prefix; 0 = all

  std::string output_dir = "run";
  std::string output_checkpoint;  // empty: <output_dir>/model.ckpt
  std::string output_name;        // report name; empty: derived from the mode

  std::filesystem::path checkpoint_path() const;

  /// Tuning candidates for the optimizer in `dyneval`.
  std::vector<DynevalConfig> tune_grid() const;
};

/// All accepted keys in serialization order.
const std::vector<std::string>& run_config_keys();

/// Sets one key from its text value. Unknown keys and malformed values raise
/// ConfigError naming the key.
void set_run_config_value(RunConfig& config, std::string_view key, std::string_view value);
std::string get_run_config_value(const RunConfig& config, std::string_view key);

/// Parses `key = value` lines onto `base`; blank lines and '#' comments are
/// ignored.
RunConfig parse_run_config(std::string_view text, RunConfig base = {});
std::string format_run_config(const RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& path);

/// ModelConfig alone, as `model.*` lines (used inside checkpoints).
std::string format_model_config(const ModelConfig& config);
ModelConfig parse_model_config(std::string_view text);

}  // namespace dynxl
