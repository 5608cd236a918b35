#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dynxl/autodiff.hpp"
#include "dynxl/param_set.hpp"
#include "dynxl/tensor.hpp"

namespace dynxl {

using TokenId = std::int32_t;

enum class OutputLayer { full, adaptive };

const char* to_string(OutputLayer kind);
OutputLayer output_layer_from_string(const std::string& text);

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t n_layers = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_head = 16;
  std::size_t d_ff = 256;
  std::size_t segment_len = 32;
  std::size_t mem_len = 32;
  double dropout_rate = 0.0;
  OutputLayer output_layer = OutputLayer::full;
  // Cluster boundaries in frequency-rank space: the head holds ranks
  // [0, cutoffs[0]) and each further range up to vocab_size is a tail.
  std::vector<std::size_t> adaptive_cutoffs;
  std::size_t adaptive_tail_shrink = 4;
  // Token ids by descending training frequency (ties by id). Empty means
  // the identity order.
  std::vector<TokenId> cluster_order;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Token ids sorted by descending count, ties broken by ascending id.
std::vector<TokenId> frequency_order(std::span<const std::uint64_t> counts);

struct AdaptiveCluster {
  std::size_t begin = 0;  // first rank in the cluster
  std::size_t end = 0;    // one past the last rank
};

/// Head cluster followed by the non-empty tail clusters.
std::vector<AdaptiveCluster> adaptive_clusters(const ModelConfig& config);

struct ModelParams {
  ModelConfig config;
  ParamSet tensors;
};

/// Initial weights: N(0, 0.02) for projections and embeddings, zero biases,
/// unit layer-norm gains, zero attention biases. Deterministic in `seed`.
ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

/// Per-layer hidden states cached from earlier segments, oldest first, plus
/// the last token seen (the input for the first position of the next
/// segment). Memory values are constants: no gradient flows into them.
struct SegmentMemory {
  std::vector<Tensor> layers;
  TokenId last_token = -1;  // -1 marks the beginning of the stream

  std::size_t length() const noexcept { return layers.empty() ? 0 : layers.front().rows(); }
  friend bool operator==(const SegmentMemory&, const SegmentMemory&) = default;
};

SegmentMemory empty_memory(const ModelConfig& config);

/// Relative-position embedding table with one row per distance 0..count-1.
Tensor sinusoid_table(std::size_t count, std::size_t dim);

struct AttentionOutput {
  Var values;   // queries x d_head
  Var weights;  // queries x keys, rows sum to one
};

/// One attention head with relative positions. Query i sits at absolute
/// position mem_len + i; keys (and rel_pos rows, indexed by distance) cover
/// mem_len + queries positions. Score(i, j) = (q_i + u).k_j + (q_i + v).r_{d}
/// with d = mem_len + i - j, scaled by 1/sqrt(d_head); keys with j > mem_len
/// + i are masked.
AttentionOutput rel_attention(Var queries, Var keys, Var values, Var rel_pos, Var content_bias,
                              Var position_bias, std::size_t mem_len);

struct ForwardOptions {
  bool training = false;          // enables dropout
  std::mt19937_64* rng = nullptr; // required when training with dropout
  bool params_require_grad = true;
};

struct SegmentForward {
  std::vector<Var> params;  // leaves in ParamSet order
  Var logprobs;             // positions x vocab, normalized per row
  Var loss;                 // mean negative log-likelihood of the segment
  std::vector<double> token_logprob;
  SegmentMemory memory;     // memory to use for the next segment
};

/// Runs one segment: position t is predicted from the memory and the
/// segment tokens before t. Builds its nodes on `graph`.
SegmentForward forward_segment(Graph& graph, const ModelParams& params,
                               std::span<const TokenId> tokens, const SegmentMemory& memory,
                               const ForwardOptions& options = {});

/// Log-probability of `target` for one final hidden state (after the final
/// layer norm) under the adaptive softmax of `params`. Graph-free.
double adaptive_softmax_logprob(std::span<const double> hidden, TokenId target,
                                const ModelParams& params);

}  // namespace dynxl
