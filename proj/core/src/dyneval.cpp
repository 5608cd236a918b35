#include "dynxl/dyneval.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "dynxl/autodiff.hpp"
#include "dynxl/errors.hpp"
#include "dynxl/numerics.hpp"

namespace dynxl {

const char* to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "rms_decay"; }

OptimizerKind optimizer_kind_from_string(const std::string& text) {
  if (text == "sgd") return OptimizerKind::sgd;
  if (text == "rms_decay" || text == "rms") return OptimizerKind::rms_decay;
  throw ConfigError("dyneval.optimizer: expected sgd or rms_decay, got '" + text + "'");
}

void DynevalConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("dyneval.learning_rate: must be a finite non-negative number");
  }
  if (optimizer == OptimizerKind::rms_decay) {
    if (!(decay_rate >= 0.0 && decay_rate <= 1.0)) throw ConfigError("dyneval.decay_rate: must lie in [0, 1]");
    if (!(epsilon > 0.0)) throw ConfigError("dyneval.epsilon: must be positive");
  }
  if (grad_clip_norm && !(*grad_clip_norm > 0.0)) throw ConfigError("dyneval.grad_clip_norm: must be positive");
}

std::string DynevalConfig::fingerprint() const {
  char buf[256];
  if (optimizer == OptimizerKind::sgd) {
    std::snprintf(buf, sizeof buf, "mode=sgd lr=%.17g", learning_rate);
  } else {
    std::snprintf(buf, sizeof buf, "mode=rms_decay lr=%.17g decay=%.17g eps=%.17g", learning_rate,
                  decay_rate, epsilon);
  }
  std::string out = buf;
  if (grad_clip_norm) {
    std::snprintf(buf, sizeof buf, " clip=%.17g", *grad_clip_norm);
    out += buf;
  }
  out += " segment_len=" + std::to_string(segment_len);
  return out;
}

AdaptState::AdaptState(ModelParams trained, std::optional<GradStats> stats)
    : AdaptState(std::make_shared<const ModelParams>(std::move(trained)), std::move(stats)) {}

AdaptState::AdaptState(std::shared_ptr<const ModelParams> trained, std::optional<GradStats> stats)
    : trained_(std::move(trained)), current_(*trained_), stats_(std::move(stats)) {
  if (stats_ && !stats_->rms.same_layout(trained_->tensors)) {
    throw AdaptationError("gradient statistics do not match the parameter layout");
  }
}

void AdaptState::reset() {
  current_ = *trained_;
  segment_index_ = 0;
  updates_ = 0;
}

namespace {

void check_grads(const ParamSet& params, const ParamSet& grads) {
  if (!grads.same_layout(params)) throw AdaptationError("gradient layout does not match the parameters");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].all_finite()) throw AdaptationError("non-finite gradient in parameter " + grads.name(i));
  }
}

}  // namespace

void sgd_update(AdaptState& state, const ParamSet& grads, double learning_rate) {
  ParamSet& theta = state.current_.tensors;
  check_grads(theta, grads);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    auto w = theta[i].values();
    auto g = grads[i].values();
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= learning_rate * g[j];
  }
  ++state.updates_;
}

void rms_decay_update(AdaptState& state, const ParamSet& grads, const GradStats& stats,
                      double learning_rate, double decay_rate, double epsilon) {
  ParamSet& theta = state.current_.tensors;
  const ParamSet& prior = state.trained_->tensors;
  check_grads(theta, grads);
  if (!stats.rms.same_layout(theta)) throw AdaptationError("gradient statistics do not match the parameters");
  for (std::size_t i = 0; i < theta.size(); ++i) {
    auto g = grads[i].values();
    auto r = stats.rms[i].values();
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (r[j] + epsilon == 0.0 && g[j] != 0.0) {
        throw AdaptationError("zero gradient statistic with non-zero gradient in parameter " + grads.name(i));
      }
    }
  }
  for (std::size_t i = 0; i < theta.size(); ++i) {
    auto w = theta[i].values();
    auto w0 = prior[i].values();
    auto g = grads[i].values();
    auto r = stats.rms[i].values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double denom = r[j] + epsilon;
      const double step = denom == 0.0 ? 0.0 : learning_rate * g[j] / denom;
      const double pull = decay_rate * (w0[j] - w[j]);
      w[j] = w[j] - step + pull;
    }
  }
  ++state.updates_;
}

double clip_grad_norm(ParamSet& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& t : grads.tensors())
    for (double v : t.values()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& t : grads.tensors())
      for (auto& v : t.values()) v *= s;
  }
  return norm;
}

SegmentStep evaluate_segment(const ModelParams& params, std::span<const TokenId> tokens,
                             const SegmentMemory& memory, bool with_grad) {
  Graph graph;
  ForwardOptions options;
  options.params_require_grad = with_grad;
  SegmentForward fwd = forward_segment(graph, params, tokens, memory, options);
  SegmentStep step;
  step.token_nats.reserve(tokens.size());
  for (double lp : fwd.token_logprob) {
    const TokenLoss loss = loss_from_logprob(lp);
    step.token_nats.push_back(loss.nats);
    step.floored += loss.floored ? 1 : 0;
  }
  step.mean_loss = fwd.loss.value()[0];
  step.memory = std::move(fwd.memory);
  if (with_grad) {
    graph.backward(fwd.loss);
    ParamSet grads;
    for (std::size_t i = 0; i < fwd.params.size(); ++i) {
      grads.add(params.tensors.name(i), fwd.params[i].grad());
    }
    step.grads = std::move(grads);
  }
  return step;
}

GradStats collect_grad_stats(const ParamSet& layout, std::size_t n_segments,
                             const std::function<ParamSet(std::size_t)>& segment_gradient) {
  if (n_segments < 1) throw DataError("gradient statistics need at least one segment");
  ParamSet sum_sq = layout.zeros_like();
  for (std::size_t s = 0; s < n_segments; ++s) {
    const ParamSet g = segment_gradient(s);
    if (!g.same_layout(layout)) throw AdaptationError("segment gradient layout mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) {
      auto acc = sum_sq[i].values();
      auto gv = g[i].values();
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += gv[j] * gv[j];
    }
  }
  GradStats stats;
  stats.segments = n_segments;
  double total = 0.0;
  for (auto& t : sum_sq.tensors()) {
    for (auto& v : t.values()) {
      v = std::sqrt(v / static_cast<double>(n_segments));
      total += v;
    }
  }
  stats.rms = std::move(sum_sq);
  const std::size_t count = stats.rms.element_count();
  stats.global_mean = count == 0 ? 0.0 : total / static_cast<double>(count);
  return stats;
}

GradStats collect_grad_stats(const ModelParams& params, const TokenStream& train,
                             std::size_t segment_len, std::size_t max_segments) {
  if (max_segments < 1) throw ConfigError("max_segments: must be at least 1");
  if (segment_len == 0) segment_len = params.config.segment_len;
  if (train.size() < segment_len) throw DataError("training stream shorter than one segment");
  const auto segments = segment_iter(train.ids(), segment_len);
  const std::size_t n = std::min(max_segments, segments.size());
  SegmentMemory memory = empty_memory(params.config);
  // Segments are visited in order, so the memory can be threaded through.
  return collect_grad_stats(params.tensors, n, [&](std::size_t s) {
    SegmentStep step = evaluate_segment(params, segments[s], memory, true);
    if (!std::isfinite(step.mean_loss)) throw DivergenceError("non-finite loss in statistics pass", s);
    memory = std::move(step.memory);
    return std::move(*step.grads);
  });
}

namespace {

void record_segment(EvalReport& report, const SegmentStep& step, std::size_t index) {
  SegmentSummary summary;
  summary.tokens = step.token_nats.size();
  for (double v : step.token_nats) {
    if (!std::isfinite(v)) throw DivergenceError("non-finite loss at segment " + std::to_string(index), index);
    summary.nats += v;
    report.total_nats += v;
    report.token_nats.push_back(v);
  }
  report.token_count += summary.tokens;
  report.floored_probabilities += step.floored;
  report.segments.push_back(summary);
}

std::size_t resolve_segment_len(std::size_t requested, const ModelParams& params) {
  const std::size_t len = requested == 0 ? params.config.segment_len : requested;
  if (len < 1) throw ConfigError("segment_len: must be at least 1");
  return len;
}

}  // namespace

EvalReport dynamic_eval(AdaptState& state, const TokenStream& stream, const DynevalConfig& config,
                        SegmentMemory memory) {
  config.validate();
  if (stream.empty()) throw DataError("dynamic evaluation: empty stream");
  if (config.optimizer == OptimizerKind::rms_decay && !state.stats_) {
    throw AdaptationError("rms_decay requires gradient statistics");
  }
  const std::size_t seg_len = resolve_segment_len(config.segment_len, state.current_);
  EvalReport report;
  report.config_fingerprint = config.fingerprint();
  const std::size_t updates_before = state.updates_;
  for (auto segment : segment_iter(stream.ids(), seg_len)) {
    const std::size_t index = state.segment_index_;
    SegmentStep step = evaluate_segment(state.current_, segment, memory, true);
    record_segment(report, step, index);
    ParamSet& grads = *step.grads;
    if (config.grad_clip_norm) clip_grad_norm(grads, *config.grad_clip_norm);
    if (config.optimizer == OptimizerKind::sgd) {
      sgd_update(state, grads, config.learning_rate);
    } else {
      rms_decay_update(state, grads, *state.stats_, config.learning_rate, config.decay_rate, config.epsilon);
    }
    memory = std::move(step.memory);
    ++state.segment_index_;
  }
  report.updates_applied = state.updates_ - updates_before;
  return report;
}

EvalReport dynamic_eval(AdaptState& state, const TokenStream& stream, const DynevalConfig& config) {
  return dynamic_eval(state, stream, config, empty_memory(state.params().config));
}

EvalReport static_eval(const ModelParams& params, const TokenStream& stream, std::size_t segment_len) {
  if (stream.empty()) throw DataError("static evaluation: empty stream");
  const std::size_t seg_len = resolve_segment_len(segment_len, params);
  EvalReport report;
  report.config_fingerprint = "mode=static segment_len=" + std::to_string(seg_len);
  SegmentMemory memory = empty_memory(params.config);
  std::size_t index = 0;
  for (auto segment : segment_iter(stream.ids(), seg_len)) {
    SegmentStep step = evaluate_segment(params, segment, memory, false);
    record_segment(report, step, index++);
    memory = std::move(step.memory);
  }
  return report;
}

}  // namespace dynxl
