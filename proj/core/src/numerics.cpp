#include "dynxl/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "dynxl/errors.hpp"

namespace dynxl {

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw StateError("softmax: empty input");
  for (double v : logits) {
    if (!std::isfinite(v)) throw NumericDomainError("softmax: non-finite logit");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  for (auto& v : out) v /= z;
  return out;
}

TokenLoss cross_entropy(std::span<const double> probabilities, std::size_t target) {
  if (target >= probabilities.size()) {
    throw DataError("cross_entropy: target " + std::to_string(target) + " outside " +
                    std::to_string(probabilities.size()) + " classes");
  }
  const double p = probabilities[target];
  if (!(p >= kProbabilityFloor)) return {-std::log(kProbabilityFloor), true};
  return {-std::log(p), false};
}

TokenLoss loss_from_logprob(double logprob) {
  static const double floor_log = std::log(kProbabilityFloor);
  if (!(logprob >= floor_log)) return {-floor_log, true};
  return {-logprob, false};
}

std::string GradCheckReport::describe(std::span<const std::string> names) const {
  std::ostringstream os;
  os << (passed ? "pass" : "FAIL") << " max_rel_error=" << max_rel_error << " over "
     << entries_checked << " entries; worst at ";
  if (worst_tensor < names.size()) {
    os << names[worst_tensor];
  } else {
    os << "tensor " << worst_tensor;
  }
  os << '[' << worst_index << "] analytic=" << worst_analytic << " numeric=" << worst_numeric;
  return os.str();
}

namespace {

double evaluate(const LossBuilder& loss, std::span<const Tensor> params) {
  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(g.leaf(p, false));
  const Var out = loss(g, leaves);
  if (out.value().size() != 1) throw StateError("grad_check: loss must be scalar");
  return out.value()[0];
}

}  // namespace

double value_and_grad(const LossBuilder& loss, std::span<const Tensor> params,
                      std::vector<Tensor>& grads) {
  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(g.leaf(p, true));
  const Var out = loss(g, leaves);
  g.backward(out);
  grads.clear();
  for (const auto& leaf : leaves) grads.push_back(leaf.grad());
  return out.value()[0];
}

GradCheckReport grad_check(const LossBuilder& loss, std::span<const Tensor> params,
                           const GradCheckOptions& options) {
  std::vector<Tensor> analytic;
  value_and_grad(loss, params, analytic);

  std::vector<Tensor> work(params.begin(), params.end());
  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  report.passed = true;

  for (std::size_t t = 0; t < work.size(); ++t) {
    std::vector<std::size_t> entries(work[t].size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (options.max_entries_per_tensor != 0 && entries.size() > options.max_entries_per_tensor) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries_per_tensor);
      std::sort(entries.begin(), entries.end());
    }
    for (auto i : entries) {
      const double orig = work[t][i];
      work[t][i] = orig + options.step;
      const double plus = evaluate(loss, work);
      work[t][i] = orig - options.step;
      const double minus = evaluate(loss, work);
      work[t][i] = orig;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      double rel = std::abs(a - numeric) / denom;
      if (std::isnan(rel)) rel = INFINITY;
      if (report.entries_checked++ == 0 || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_tensor = t;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace dynxl
