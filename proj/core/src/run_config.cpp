#include "dynxl/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

#include "dynxl/binary_io.hpp"
#include "dynxl/errors.hpp"

namespace dynxl {

const char* to_string(EvalMode mode) {
  switch (mode) {
    case EvalMode::static_: return "static";
    case EvalMode::sgd: return "sgd";
    case EvalMode::rms: return "rms";
  }
  return "?";
}

EvalMode eval_mode_from_string(const std::string& text) {
  if (text == "static") return EvalMode::static_;
  if (text == "sgd") return EvalMode::sgd;
  if (text == "rms" || text == "rms_decay") return EvalMode::rms;
  throw ConfigError("eval.mode: expected static, sgd or rms, got '" + text + "'");
}

std::filesystem::path RunConfig::checkpoint_path() const {
  if (!output_checkpoint.empty()) return output_checkpoint;
  return std::filesystem::path(output_dir) / "model.ckpt";
}

std::vector<DynevalConfig> RunConfig::tune_grid() const {
  if (tune_learning_rates.empty()) {
    auto grid = default_grid(dyneval.optimizer, dyneval.segment_len);
    for (auto& c : grid) {
      c.epsilon = dyneval.epsilon;
      c.grad_clip_norm = dyneval.grad_clip_norm;
    }
    return grid;
  }
  std::vector<double> decays = tune_decay_rates;
  if (dyneval.optimizer == OptimizerKind::sgd || decays.empty()) decays = {dyneval.decay_rate};
  std::vector<DynevalConfig> grid;
  for (double lr : tune_learning_rates) {
    for (double decay : decays) {
      DynevalConfig c = dyneval;
      c.learning_rate = lr;
      c.decay_rate = dyneval.optimizer == OptimizerKind::sgd ? 0.0 : decay;
      grid.push_back(c);
    }
  }
  return grid;
}

namespace {

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw ConfigError(std::string(key) + ": expected " + expected + ", got '" + std::string(value) + "'");
}

std::size_t parse_size(std::string_view key, std::string_view text) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) bad_value(key, text, "a non-negative integer");
  return v;
}

double parse_double(std::string_view key, std::string_view text) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) bad_value(key, text, "a number");
  return v;
}

std::optional<double> parse_optional(std::string_view key, std::string_view text) {
  if (text == "none" || text == "off" || text.empty()) return std::nullopt;
  return parse_double(key, text);
}

std::vector<std::string_view> split_list(std::string_view text) {
  std::vector<std::string_view> out;
  while (!text.empty()) {
    auto comma = text.find(',');
    auto item = text.substr(0, comma);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_optional(const std::optional<double>& v) { return v ? fmt_double(*v) : "none"; }

template <class T>
std::string fmt_list(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt_double(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

struct Entry {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define DYNXL_SIZE(KEY, FIELD)                                                              \
  Entry {                                                                                   \
    KEY, [](RunConfig& c, std::string_view v) { c.FIELD = parse_size(KEY, v); },            \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                         \
  }
#define DYNXL_DOUBLE(KEY, FIELD)                                                            \
  Entry {                                                                                   \
    KEY, [](RunConfig& c, std::string_view v) { c.FIELD = parse_double(KEY, v); },          \
        [](const RunConfig& c) { return fmt_double(c.FIELD); }                             \
  }
#define DYNXL_STRING(KEY, FIELD)                                                            \
  Entry {                                                                                   \
    KEY, [](RunConfig& c, std::string_view v) { c.FIELD = std::string(v); },                \
        [](const RunConfig& c) { return c.FIELD; }                                         \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      {"data.source",
       [](RunConfig& c, std::string_view v) {
         if (v == "file") c.data_source = DataSource::file;
         else if (v == "repetition") c.data_source = DataSource::repetition;
         else bad_value("data.source", v, "file or repetition");
       },
       [](const RunConfig& c) { return std::string(c.data_source == DataSource::file ? "file" : "repetition"); }},
      {"data.kind",
       [](RunConfig& c, std::string_view v) {
         try {
           c.data_kind = vocab_kind_from_string(std::string(v));
         } catch (const Error&) {
           bad_value("data.kind", v, "byte, char27 or word");
         }
       },
       [](const RunConfig& c) { return std::string(to_string(c.data_kind)); }},
      DYNXL_STRING("data.input", data_input),
      DYNXL_STRING("data.dir", data_dir),
      DYNXL_DOUBLE("data.train_fraction", fractions.train),
      DYNXL_DOUBLE("data.valid_fraction", fractions.valid),
      DYNXL_DOUBLE("data.test_fraction", fractions.test),
      DYNXL_SIZE("data.vocab_limit", vocab_limit),
      DYNXL_SIZE("data.repetition.seed", repetition.seed),
      DYNXL_SIZE("data.repetition.vocab_size", repetition.vocab_size),
      DYNXL_SIZE("data.repetition.n_patterns", repetition.n_patterns),
      DYNXL_SIZE("data.repetition.pattern_len", repetition.pattern_len),
      DYNXL_DOUBLE("data.repetition.background_entropy", repetition.background_entropy),
      DYNXL_SIZE("data.repetition.length", repetition.length),
      DYNXL_SIZE("data.repetition.document_len", repetition.document_len),

      DYNXL_SIZE("model.vocab_size", model.vocab_size),
      DYNXL_SIZE("model.n_layers", model.n_layers),
      DYNXL_SIZE("model.d_model", model.d_model),
      DYNXL_SIZE("model.n_heads", model.n_heads),
      DYNXL_SIZE("model.d_head", model.d_head),
      DYNXL_SIZE("model.d_ff", model.d_ff),
      DYNXL_SIZE("model.segment_len", model.segment_len),
      DYNXL_SIZE("model.mem_len", model.mem_len),
      DYNXL_DOUBLE("model.dropout_rate", model.dropout_rate),
      {"model.output_layer",
       [](RunConfig& c, std::string_view v) {
         try {
           c.model.output_layer = output_layer_from_string(std::string(v));
         } catch (const Error&) {
           bad_value("model.output_layer", v, "full or adaptive");
         }
       },
       [](const RunConfig& c) { return std::string(to_string(c.model.output_layer)); }},
      {"model.adaptive_cutoffs",
       [](RunConfig& c, std::string_view v) {
         c.model.adaptive_cutoffs.clear();
         for (auto item : split_list(v)) c.model.adaptive_cutoffs.push_back(parse_size("model.adaptive_cutoffs", item));
       },
       [](const RunConfig& c) { return fmt_list(c.model.adaptive_cutoffs); }},
      DYNXL_SIZE("model.adaptive_tail_shrink", model.adaptive_tail_shrink),

      DYNXL_DOUBLE("train.learning_rate", train.learning_rate),
      DYNXL_DOUBLE("train.beta1", train.beta1),
      DYNXL_DOUBLE("train.beta2", train.beta2),
      DYNXL_DOUBLE("train.adam_epsilon", train.adam_epsilon),
      DYNXL_SIZE("train.warmup_steps", train.warmup_steps),
      DYNXL_DOUBLE("train.min_lr_ratio", train.min_lr_ratio),
      DYNXL_SIZE("train.batch_size", train.batch_size),
      DYNXL_SIZE("train.steps", train.steps),
      {"train.grad_clip_norm",
       [](RunConfig& c, std::string_view v) { c.train.grad_clip_norm = parse_optional("train.grad_clip_norm", v); },
       [](const RunConfig& c) { return fmt_optional(c.train.grad_clip_norm); }},
      DYNXL_SIZE("train.seed", train.seed),
      DYNXL_SIZE("train.eval_interval", train.eval_interval),
      DYNXL_SIZE("train.eval_tokens", train.eval_tokens),

      {"dyneval.optimizer",
       [](RunConfig& c, std::string_view v) { c.dyneval.optimizer = optimizer_kind_from_string(std::string(v)); },
       [](const RunConfig& c) { return std::string(to_string(c.dyneval.optimizer)); }},
      DYNXL_DOUBLE("dyneval.learning_rate", dyneval.learning_rate),
      DYNXL_DOUBLE("dyneval.decay_rate", dyneval.decay_rate),
      DYNXL_DOUBLE("dyneval.epsilon", dyneval.epsilon),
      {"dyneval.grad_clip_norm",
       [](RunConfig& c, std::string_view v) { c.dyneval.grad_clip_norm = parse_optional("dyneval.grad_clip_norm", v); },
       [](const RunConfig& c) { return fmt_optional(c.dyneval.grad_clip_norm); }},
      DYNXL_SIZE("dyneval.segment_len", dyneval.segment_len),
      DYNXL_SIZE("stats.max_segments", stats_max_segments),

      {"eval.mode",
       [](RunConfig& c, std::string_view v) { c.eval_mode = eval_mode_from_string(std::string(v)); },
       [](const RunConfig& c) { return std::string(to_string(c.eval_mode)); }},
      {"eval.split",
       [](RunConfig& c, std::string_view v) {
         if (v == "valid") c.eval_split = Split::valid;
         else if (v == "test") c.eval_split = Split::test;
         else if (v == "train") c.eval_split = Split::train;
         else bad_value("eval.split", v, "train, valid or test");
       },
       [](const RunConfig& c) { return std::string(to_string(c.eval_split)); }},

      {"tune.learning_rates",
       [](RunConfig& c, std::string_view v) {
         c.tune_learning_rates.clear();
         for (auto item : split_list(v)) c.tune_learning_rates.push_back(parse_double("tune.learning_rates", item));
       },
       [](const RunConfig& c) { return fmt_list(c.tune_learning_rates); }},
      {"tune.decay_rates",
       [](RunConfig& c, std::string_view v) {
         c.tune_decay_rates.clear();
         for (auto item : split_list(v)) c.tune_decay_rates.push_back(parse_double("tune.decay_rates", item));
       },
       [](const RunConfig& c) { return fmt_list(c.tune_decay_rates); }},
      DYNXL_SIZE("tune.eval_tokens", tune_eval_tokens),

      DYNXL_STRING("output.dir", output_dir),
      DYNXL_STRING("output.checkpoint", output_checkpoint),
      DYNXL_STRING("output.name", output_name),
  };
  return table;
}

#undef DYNXL_SIZE
#undef DYNXL_DOUBLE
#undef DYNXL_STRING

const Entry& lookup(std::string_view key) {
  for (const auto& e : entries()) {
    if (e.key == key) return e;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <class Fn>
void for_each_assignment(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    auto line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    fn(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

}  // namespace

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& e : entries()) out.push_back(e.key);
    return out;
  }();
  return keys;
}

void set_run_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  lookup(key).set(config, value);
}

std::string get_run_config_value(const RunConfig& config, std::string_view key) { return lookup(key).get(config); }

RunConfig parse_run_config(std::string_view text, RunConfig base) {
  for_each_assignment(text, [&](std::string_view key, std::string_view value) {
    set_run_config_value(base, key, value);
  });
  return base;
}

std::string format_run_config(const RunConfig& config) {
  std::ostringstream os;
  for (const auto& e : entries()) os << e.key << " = " << e.get(config) << '\n';
  return os.str();
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_text_file(path);
  } catch (const Error& e) {
    throw ConfigError("cannot read config file " + path.string() + ": " + e.what());
  }
  return parse_run_config(text);
}

std::string format_model_config(const ModelConfig& config) {
  RunConfig rc;
  rc.model = config;
  std::ostringstream os;
  for (const auto& e : entries()) {
    if (e.key.starts_with("model.")) os << e.key << " = " << e.get(rc) << '\n';
  }
  os << "model.cluster_order = " << fmt_list(config.cluster_order) << '\n';
  return os.str();
}

ModelConfig parse_model_config(std::string_view text) {
  RunConfig rc;
  rc.model = ModelConfig{};
  for_each_assignment(text, [&](std::string_view key, std::string_view value) {
    if (key == "model.cluster_order") {
      rc.model.cluster_order.clear();
      for (auto item : split_list(value)) {
        rc.model.cluster_order.push_back(static_cast<TokenId>(parse_size(key, item)));
      }
      return;
    }
    if (!key.starts_with("model.")) throw ConfigError("unexpected key '" + std::string(key) + "' in model config");
    set_run_config_value(rc, key, value);
  });
  return rc.model;
}

}  // namespace dynxl
