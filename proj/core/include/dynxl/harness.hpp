#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dynxl/data.hpp"
#include "dynxl/dyneval.hpp"
#include "dynxl/eval_report.hpp"
#include "dynxl/model.hpp"

namespace dynxl {

/// Adam with linear warmup and cosine decay to `min_lr_ratio * learning_rate`.
struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t warmup_steps = 100;
  double min_lr_ratio = 0.1;
  std::size_t batch_size = 4;  // parallel streams over disjoint shards
  std::size_t steps = 1000;
  std::optional<double> grad_clip_norm = 1.0;
  std::uint64_t seed = 1;
  std::size_t eval_interval = 100;
  std::size_t eval_tokens = 0;  // validation prefix used for selection; 0 = all

  void validate() const;
  double learning_rate_at(std::size_t step) const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct CurvePoint {
  std::size_t step = 0;
  double train_loss = 0.0;                  // mean nats of the step's batch
  std::optional<double> valid_bits;         // set at evaluation steps
};

struct TrainResult {
  ModelParams params;  // best validation checkpoint
  std::vector<CurvePoint> curve;
  std::size_t best_step = 0;
  double best_valid_bits = 0.0;
};

/// Called whenever a new best validation checkpoint is selected.
using BestCallback = std::function<void(const ModelParams&, std::size_t step, double valid_bits)>;

/// Trains from init_model(config, tcfg.seed). Each of the batch streams walks
/// its own contiguous shard with its own segment memory. Throws
/// DivergenceError (carrying the step) on a non-finite training loss.
TrainResult train(const ModelConfig& config, const TrainConfig& tcfg, const TokenStream& train_stream,
                  const TokenStream& valid_stream, const BestCallback& on_best = {});

/// Default grid. sgd: lr in {1e-4, 3e-4, ..., 3e-1}. rms_decay: lr in
/// {1e-5, 3e-5, ..., 1e-2} crossed with decay in {0, 1e-3, 1e-2, 3e-2}.
std::vector<DynevalConfig> default_grid(OptimizerKind kind, std::size_t segment_len = 0);

struct TuneResult {
  std::size_t best_index = 0;
  std::vector<DynevalConfig> grid;
  std::vector<EvalReport> reports;  // one per candidate, grid order
  // Non-empty where a candidate diverged; its report then has infinite loss.
  std::vector<std::string> failures;
  const DynevalConfig& best() const { return grid[best_index]; }
};

/// Evaluates every candidate from a fresh copy of the trained parameters on
/// the validation stream; best = lowest bits per token (first wins ties).
/// Never sees a test stream: a stream labelled test is rejected. Diverging
/// candidates are recorded and skipped; DivergenceError only if all diverge.
TuneResult tune_dyneval(std::shared_ptr<const ModelParams> trained, const std::optional<GradStats>& stats,
                        const TokenStream& valid, const std::vector<DynevalConfig>& grid);

enum class Metric { bits_per_token, perplexity };

const char* to_string(Metric metric);
Metric metric_from_string(const std::string& text);
double metric_value(const EvalReport& report, Metric metric);

struct ComparisonRow {
  std::string name;
  double value = 0.0;
  std::optional<double> delta;        // baseline - value
  std::optional<double> improvement;  // (baseline - value) / baseline
};

struct ComparisonTable {
  Metric metric = Metric::bits_per_token;
  std::string baseline;
  std::vector<ComparisonRow> rows;

  bool has_improvement() const { return rows.size() > 1; }
  std::string to_text() const;
  std::string to_csv() const;
};

/// Rows in input order; improvement is relative to the row named `baseline`
/// (the first row when empty).
ComparisonTable compare_values(const std::vector<std::pair<std::string, double>>& values, Metric metric,
                               const std::string& baseline = {});

/// Same over reports. All reports must share a vocabulary fingerprint.
ComparisonTable compare_table(std::span<const EvalReport> reports, Metric metric,
                              const std::string& baseline = {});

}  // namespace dynxl
