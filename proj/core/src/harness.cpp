#include "dynxl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdio>
#include <numbers>
#include <random>
#include <sstream>

#include "dynxl/autodiff.hpp"
#include "dynxl/errors.hpp"
#include "dynxl/parallel.hpp"

namespace dynxl {

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("train.steps: must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate: must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1: must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2: must lie in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw ConfigError("train.adam_epsilon: must be positive");
  if (!(min_lr_ratio >= 0.0 && min_lr_ratio <= 1.0)) throw ConfigError("train.min_lr_ratio: must lie in [0, 1]");
  if (batch_size < 1) throw ConfigError("train.batch_size: must be at least 1");
  if (eval_interval < 1) throw ConfigError("train.eval_interval: must be at least 1");
  if (grad_clip_norm && !(*grad_clip_norm > 0.0)) throw ConfigError("train.grad_clip_norm: must be positive");
}

double TrainConfig::learning_rate_at(std::size_t step) const {
  if (warmup_steps > 0 && step <= warmup_steps) {
    return learning_rate * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  if (steps <= warmup_steps) return learning_rate;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(steps - warmup_steps);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
  return learning_rate * (min_lr_ratio + (1.0 - min_lr_ratio) * cosine);
}

namespace {

struct ShardCursor {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t pos = 0;
  SegmentMemory memory;
  std::mt19937_64 rng;
};

struct StreamStep {
  ParamSet grads;
  double loss = 0.0;
  SegmentMemory memory;
};

StreamStep train_segment(const ModelParams& params, std::span<const TokenId> tokens, ShardCursor& cursor) {
  Graph graph;
  ForwardOptions options;
  options.training = true;
  options.rng = &cursor.rng;
  SegmentForward fwd = forward_segment(graph, params, tokens, cursor.memory, options);
  graph.backward(fwd.loss);
  StreamStep out;
  for (std::size_t i = 0; i < fwd.params.size(); ++i) out.grads.add(params.tensors.name(i), fwd.params[i].grad());
  out.loss = fwd.loss.value()[0];
  out.memory = std::move(fwd.memory);
  return out;
}

double validation_bits(const ModelParams& params, const TokenStream& valid, std::size_t eval_tokens) {
  if (eval_tokens == 0 || eval_tokens >= valid.size()) return static_eval(params, valid).bits_per_token();
  return static_eval(params, valid.slice(0, eval_tokens, valid.split())).bits_per_token();
}

}  // namespace

TrainResult train(const ModelConfig& config, const TrainConfig& tcfg, const TokenStream& train_stream,
                  const TokenStream& valid_stream, const BestCallback& on_best) {
  tcfg.validate();
  config.validate();
  if (train_stream.empty() || valid_stream.empty()) throw DataError("train: streams must be non-empty");
  if (train_stream.size() < tcfg.batch_size) throw DataError("train: fewer tokens than parallel streams");

  ModelParams params = init_model(config, tcfg.seed);
  ParamSet m = params.tensors.zeros_like();
  ParamSet v = params.tensors.zeros_like();

  const std::size_t batch = tcfg.batch_size;
  const std::size_t total = train_stream.size();
  std::vector<ShardCursor> cursors(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    cursors[b].begin = total * b / batch;
    cursors[b].end = total * (b + 1) / batch;
    cursors[b].pos = cursors[b].begin;
    cursors[b].memory = empty_memory(config);
    cursors[b].rng.seed(tcfg.seed * 1000003ULL + b);
  }

  TrainResult result;
  result.best_valid_bits = validation_bits(params, valid_stream, tcfg.eval_tokens);
  result.params = params;
  result.curve.push_back({0, 0.0, result.best_valid_bits});
  if (on_best) on_best(params, 0, result.best_valid_bits);

  const auto ids = train_stream.ids();
  std::vector<StreamStep> steps(batch);
  for (std::size_t step = 1; step <= tcfg.steps; ++step) {
    std::vector<std::span<const TokenId>> segments(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      ShardCursor& c = cursors[b];
      if (c.pos >= c.end) {
        c.pos = c.begin;
        c.memory = empty_memory(config);
      }
      const std::size_t len = std::min(config.segment_len, c.end - c.pos);
      segments[b] = ids.subspan(c.pos, len);
      c.pos += len;
    }
    try {
      parallel_for(batch, [&](std::size_t b) { steps[b] = train_segment(params, segments[b], cursors[b]); });
    } catch (const NumericDomainError& e) {
      // Overflowed weights surface as non-finite activations inside forward.
      throw DivergenceError("non-finite values at step " + std::to_string(step) + ": " + e.what(), step);
    }

    ParamSet grads = params.tensors.zeros_like();
    double loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      loss += steps[b].loss;
      for (std::size_t i = 0; i < grads.size(); ++i) {
        auto acc = grads[i].values();
        auto g = steps[b].grads[i].values();
        for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
      }
      cursors[b].memory = std::move(steps[b].memory);
    }
    loss /= static_cast<double>(batch);
    if (!std::isfinite(loss)) throw DivergenceError("non-finite training loss at step " + std::to_string(step), step);
    const double inv_batch = 1.0 / static_cast<double>(batch);
    for (auto& t : grads.tensors())
      for (auto& g : t.values()) g *= inv_batch;
    if (tcfg.grad_clip_norm) clip_grad_norm(grads, *tcfg.grad_clip_norm);

    const double lr = tcfg.learning_rate_at(step);
    const double bc1 = 1.0 - std::pow(tcfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(tcfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < grads.size(); ++i) {
      auto w = params.tensors[i].values();
      auto g = grads[i].values();
      auto mi = m[i].values();
      auto vi = v[i].values();
      for (std::size_t j = 0; j < w.size(); ++j) {
        mi[j] = tcfg.beta1 * mi[j] + (1.0 - tcfg.beta1) * g[j];
        vi[j] = tcfg.beta2 * vi[j] + (1.0 - tcfg.beta2) * g[j] * g[j];
        w[j] -= lr * (mi[j] / bc1) / (std::sqrt(vi[j] / bc2) + tcfg.adam_epsilon);
      }
    }

    CurvePoint point{step, loss, std::nullopt};
    if (step % tcfg.eval_interval == 0 || step == tcfg.steps) {
      const double bits = validation_bits(params, valid_stream, tcfg.eval_tokens);
      point.valid_bits = bits;
      if (bits < result.best_valid_bits) {
        result.best_valid_bits = bits;
        result.best_step = step;
        result.params = params;
        if (on_best) on_best(params, step, bits);
      }
    }
    result.curve.push_back(point);
  }
  return result;
}

std::vector<DynevalConfig> default_grid(OptimizerKind kind, std::size_t segment_len) {
  const std::vector<double> sgd_rates = {1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1};
  const std::vector<double> rms_rates = {1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2};
  const std::vector<double> decays = {0.0, 1e-3, 1e-2, 3e-2};
  std::vector<DynevalConfig> grid;
  for (double lr : kind == OptimizerKind::sgd ? sgd_rates : rms_rates) {
    for (double decay : kind == OptimizerKind::sgd ? std::vector<double>{0.0} : decays) {
      DynevalConfig c;
      c.optimizer = kind;
      c.learning_rate = lr;
      c.decay_rate = decay;
      c.segment_len = segment_len;
      grid.push_back(c);
    }
  }
  return grid;
}

TuneResult tune_dyneval(std::shared_ptr<const ModelParams> trained, const std::optional<GradStats>& stats,
                        const TokenStream& valid, const std::vector<DynevalConfig>& grid) {
  if (grid.empty()) throw ConfigError("tune: empty hyperparameter grid");
  if (valid.split() == Split::test) throw DataError("tune: refusing to tune on a test stream");
  for (const auto& c : grid) c.validate();
  TuneResult result;
  result.grid = grid;
  result.reports.resize(grid.size());
  result.failures.resize(grid.size());
  parallel_for(grid.size(), [&](std::size_t i) {
    AdaptState state(trained, grid[i].optimizer == OptimizerKind::rms_decay ? stats : std::nullopt);
    try {
      result.reports[i] = dynamic_eval(state, valid, grid[i]);
    } catch (const DivergenceError& e) {
      result.failures[i] = e.what();
    } catch (const NumericDomainError& e) {
      result.failures[i] = e.what();
    }
    if (!result.failures[i].empty()) {
      result.reports[i] = EvalReport{};
      result.reports[i].config_fingerprint = grid[i].fingerprint();
      result.reports[i].token_count = valid.size();
      result.reports[i].total_nats = std::numeric_limits<double>::infinity();
    }
  });
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!result.failures[i].empty()) continue;
    if (!best || result.reports[i].bits_per_token() < result.reports[*best].bits_per_token()) best = i;
  }
  if (!best) throw DivergenceError("tune: every candidate diverged; first: " + result.failures[0], 0);
  result.best_index = *best;
  return result;
}

const char* to_string(Metric metric) { return metric == Metric::bits_per_token ? "bits_per_token" : "perplexity"; }

Metric metric_from_string(const std::string& text) {
  if (text == "bpc" || text == "bits" || text == "bits_per_token") return Metric::bits_per_token;
  if (text == "ppl" || text == "perplexity") return Metric::perplexity;
  throw ConfigError("report.metric: expected bpc or ppl, got '" + text + "'");
}

double metric_value(const EvalReport& report, Metric metric) {
  return metric == Metric::bits_per_token ? report.bits_per_token() : report.perplexity();
}

ComparisonTable compare_values(const std::vector<std::pair<std::string, double>>& values, Metric metric,
                               const std::string& baseline) {
  if (values.empty()) throw ComparisonError("comparison needs at least one report");
  ComparisonTable table;
  table.metric = metric;
  table.baseline = baseline.empty() ? values.front().first : baseline;
  auto base = std::find_if(values.begin(), values.end(), [&](const auto& v) { return v.first == table.baseline; });
  if (base == values.end()) throw ComparisonError("baseline '" + table.baseline + "' not among the reports");
  for (const auto& [name, value] : values) {
    ComparisonRow row{name, value, std::nullopt, std::nullopt};
    if (values.size() > 1) {
      row.delta = base->second - value;
      row.improvement = (base->second - value) / base->second;
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

ComparisonTable compare_table(std::span<const EvalReport> reports, Metric metric, const std::string& baseline) {
  if (reports.empty()) throw ComparisonError("comparison needs at least one report");
  std::vector<std::pair<std::string, double>> values;
  for (const auto& r : reports) {
    if (r.vocab_fingerprint != reports.front().vocab_fingerprint) {
      throw ComparisonError("report '" + r.name + "' uses a different vocabulary (" + r.vocab_fingerprint +
                            " vs " + reports.front().vocab_fingerprint + ")");
    }
    values.emplace_back(r.name, metric_value(r, metric));
  }
  return compare_values(values, metric, baseline);
}

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

std::string ComparisonTable::to_text() const {
  std::size_t name_w = 5;
  for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
  const char* metric_name = metric == Metric::bits_per_token ? "bits/token" : "perplexity";
  std::ostringstream os;
  auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
  };
  auto lpad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.insert(0, w - s.size(), ' ');
    return s;
  };
  os << pad("model", name_w) << "  " << lpad(metric_name, 12);
  if (has_improvement()) os << "  " << lpad("delta", 10) << "  " << lpad("improvement", 11);
  os << '\n';
  for (const auto& r : rows) {
    os << pad(r.name, name_w) << "  " << lpad(fmt("%.4f", r.value), 12);
    if (has_improvement()) {
      os << "  " << lpad(fmt("%.4f", *r.delta), 10) << "  " << lpad(fmt("%.1f%%", 100.0 * *r.improvement), 11);
    }
    os << '\n';
  }
  return os.str();
}

std::string ComparisonTable::to_csv() const {
  std::ostringstream os;
  os << "model," << to_string(metric);
  if (has_improvement()) os << ",delta,improvement";
  os << '\n';
  for (const auto& r : rows) {
    os << r.name << ',' << fmt("%.17g", r.value);
    if (has_improvement()) os << ',' << fmt("%.17g", *r.delta) << ',' << fmt("%.17g", *r.improvement);
    os << '\n';
  }
  return os.str();
}

}  // namespace dynxl
