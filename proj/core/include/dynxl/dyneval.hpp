#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>

#include "dynxl/data.hpp"
#include "dynxl/eval_report.hpp"
#include "dynxl/model.hpp"
#include "dynxl/param_set.hpp"

namespace dynxl {

enum class OptimizerKind { sgd, rms_decay };

const char* to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& text);

/// Knobs of one dynamic-evaluation run.
struct DynevalConfig {
  OptimizerKind optimizer = OptimizerKind::sgd;
  double learning_rate = 1e-4;
  double decay_rate = 0.0;  // rms_decay only
  double epsilon = 1e-8;    // rms_decay only
  std::optional<double> grad_clip_norm;
  std::size_t segment_len = 0;  // 0: use the model's segment length

  void validate() const;
  std::string fingerprint() const;

  friend bool operator==(const DynevalConfig&, const DynevalConfig&) = default;
};

/// Root-mean-square of per-segment gradients over training data.
struct GradStats {
  ParamSet rms;
  std::size_t segments = 0;
  double global_mean = 0.0;
};

/// Parameters being adapted, next to the frozen trained parameters they
/// decay toward. The trained copy is shared and never written.
class AdaptState {
 public:
  explicit AdaptState(ModelParams trained, std::optional<GradStats> stats = std::nullopt);
  explicit AdaptState(std::shared_ptr<const ModelParams> trained, std::optional<GradStats> stats = std::nullopt);

  const ModelParams& params() const noexcept { return current_; }
  ModelParams& params() noexcept { return current_; }
  const ModelParams& trained() const noexcept { return *trained_; }
  std::shared_ptr<const ModelParams> trained_ptr() const noexcept { return trained_; }
  const std::optional<GradStats>& stats() const noexcept { return stats_; }

  std::size_t segment_index() const noexcept { return segment_index_; }
  std::size_t updates_applied() const noexcept { return updates_; }

  /// Restores the trained parameters bit-exactly and clears the counters.
  void reset();

 private:
  friend void sgd_update(AdaptState&, const ParamSet&, double);
  friend void rms_decay_update(AdaptState&, const ParamSet&, const GradStats&, double, double, double);
  friend EvalReport dynamic_eval(AdaptState&, const TokenStream&, const DynevalConfig&, SegmentMemory);

  std::shared_ptr<const ModelParams> trained_;
  ModelParams current_;
  std::optional<GradStats> stats_;
  std::size_t segment_index_ = 0;
  std::size_t updates_ = 0;
};

/// theta <- theta - lr * g.
void sgd_update(AdaptState& state, const ParamSet& grads, double learning_rate);

/// theta <- theta - lr * g / (rms + eps) + decay * (theta_trained - theta),
/// both terms evaluated at the pre-update theta. An element whose rms + eps
/// is zero takes no gradient step when its gradient is zero and raises
/// AdaptationError otherwise.
void rms_decay_update(AdaptState& state, const ParamSet& grads, const GradStats& stats,
                      double learning_rate, double decay_rate, double epsilon);

/// Scales `grads` in place so that their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(ParamSet& grads, double max_norm);

struct SegmentStep {
  std::vector<double> token_nats;
  std::uint64_t floored = 0;
  double mean_loss = 0.0;
  std::optional<ParamSet> grads;  // gradient of the mean segment loss
  SegmentMemory memory;           // states computed under the given params
};

/// Forward (and optionally backward) pass over one segment. Gradients stop
/// at the memory, so backpropagation never leaves the segment.
SegmentStep evaluate_segment(const ModelParams& params, std::span<const TokenId> tokens,
                             const SegmentMemory& memory, bool with_grad);

/// Gradient statistics from up to `max_segments` consecutive training
/// segments, carrying memory across segments as evaluation does.
GradStats collect_grad_stats(const ModelParams& params, const TokenStream& train,
                             std::size_t segment_len, std::size_t max_segments);

/// Same accumulation for an arbitrary per-segment gradient source.
GradStats collect_grad_stats(const ParamSet& layout, std::size_t n_segments,
                             const std::function<ParamSet(std::size_t segment)>& segment_gradient);

/// Predict-then-adapt over the stream: each segment is scored with the
/// current parameters, then one update is applied from that segment's
/// gradient before the next segment is scored. The memory passed on is the
/// one computed before the update.
EvalReport dynamic_eval(AdaptState& state, const TokenStream& stream, const DynevalConfig& config,
                        SegmentMemory memory);
EvalReport dynamic_eval(AdaptState& state, const TokenStream& stream, const DynevalConfig& config);

/// Same segment and memory processing with frozen parameters.
EvalReport static_eval(const ModelParams& params, const TokenStream& stream, std::size_t segment_len = 0);

}  // namespace dynxl
