#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dynxl/autodiff.hpp"
#include "dynxl/data.hpp"
#include "dynxl/model.hpp"
#include "dynxl/numerics.hpp"
#include "dynxl/tensor.hpp"

namespace dynxl::test {

inline Tensor random_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Tensor t({rows, cols});
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

inline std::vector<TokenId> random_tokens(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
  std::uniform_int_distribution<TokenId> dist(0, static_cast<TokenId>(vocab) - 1);
  std::vector<TokenId> out(n);
  for (auto& t : out) t = dist(rng);
  return out;
}

// Small config used across tests; fast enough for finite differences.
inline ModelConfig tiny_config(std::size_t vocab = 11, std::size_t layers = 2) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.n_layers = layers;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_head = 4;
  c.d_ff = 12;
  c.segment_len = 5;
  c.mem_len = 4;
  return c;
}

// init_model uses small weights; scaling them up makes attention patterns
// and layer norms non-trivial, which gives the gradient checks teeth.
inline ModelParams perturbed_model(const ModelConfig& config, std::uint64_t seed, double scale = 0.5) {
  ModelParams p = init_model(config, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& t : p.tensors.tensors())
    for (auto& v : t.values()) v += dist(rng);
  return p;
}

inline double segment_loss(const ModelParams& params, std::span<const TokenId> tokens, const SegmentMemory& memory) {
  Graph g;
  return forward_segment(g, params, tokens, memory, {.params_require_grad = false}).loss.value()[0];
}

// Finite differences on the mean segment loss, taken directly on the model
// parameters, against the gradient from backward(). Checks up to
// `per_tensor` seeded entries of every tensor (0 = all). Uses the 4-point
// central stencil: with h = 1e-3 its truncation error is O(h^4), while the
// 2-point rule needs h near 1e-5 where roundoff in the loss (a few ulps of
// ~3 nats) swamps gradients below 1e-7.
inline GradCheckReport model_grad_check(const ModelParams& params, std::span<const TokenId> tokens,
                                        const SegmentMemory& memory, std::size_t per_tensor, std::uint64_t seed,
                                        double step = 1e-3) {
  Graph g;
  auto fwd = forward_segment(g, params, tokens, memory);
  g.backward(fwd.loss);
  GradCheckReport report;
  std::mt19937_64 rng(seed);
  ModelParams work = params;
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    const Tensor& analytic = fwd.params[t].grad();
    std::vector<std::size_t> idx(analytic.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (per_tensor > 0 && per_tensor < idx.size()) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(per_tensor);
    }
    for (std::size_t i : idx) {
      double& w = work.tensors[t][i];
      const double saved = w;
      auto at = [&](double offset) {
        w = saved + offset;
        return segment_loss(work, tokens, memory);
      };
      const double numeric = (8.0 * (at(step) - at(-step)) - (at(2 * step) - at(-2 * step))) / (12.0 * step);
      w = saved;
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      if (report.entries_checked++ == 0 || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_tensor = t;
        report.worst_index = i;
        report.worst_analytic = analytic[i];
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error < 1e-4;
  return report;
}

}  // namespace dynxl::test
