#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "dynxl/autodiff.hpp"
#include "dynxl/tensor.hpp"

namespace dynxl {

/// Probability floor applied when scoring a target token; losses never
/// exceed -ln(kProbabilityFloor).
inline constexpr double kProbabilityFloor = 1e-12;

inline double nats_to_bits(double nats) { return nats / std::numbers::ln2; }

/// Shift-invariant softmax (the maximum is subtracted before exponentiating).
/// Throws NumericDomainError on non-finite logits.
std::vector<double> softmax(std::span<const double> logits);

struct TokenLoss {
  double nats = 0.0;
  bool floored = false;
};

/// -log p[target], with p[target] clamped to kProbabilityFloor.
TokenLoss cross_entropy(std::span<const double> probabilities, std::size_t target);

/// Same contract expressed on a log-probability.
TokenLoss loss_from_logprob(double logprob);

/// Builds a scalar loss on `graph` from leaves holding the parameters.
using LossBuilder = std::function<Var(Graph& graph, std::span<const Var> params)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error so that vanishing gradients
  // are compared absolutely.
  double abs_floor = 1e-6;
  // 0 checks every element; otherwise a seeded sample per tensor.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  std::string describe(std::span<const std::string> names = {}) const;
};

/// Compares the reverse-mode gradient of `loss` with central differences.
GradCheckReport grad_check(const LossBuilder& loss, std::span<const Tensor> params,
                           const GradCheckOptions& options = {});

/// Evaluates the loss and its gradient with respect to every parameter.
double value_and_grad(const LossBuilder& loss, std::span<const Tensor> params,
                      std::vector<Tensor>& grads);

}  // namespace dynxl
