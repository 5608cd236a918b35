#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dynxl/tensor.hpp"

namespace dynxl {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
};

/// Reverse-mode tape. Nodes are appended in construction order, which is a
/// valid topological order, and backward walks that order in reverse so the
/// summation order of fan-out gradients is fixed by node index.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an operation node. `backward` reads this node's gradient and
  /// accumulates into the inputs through grad_slot(). It is only invoked
  /// when the node requires a gradient.
  Var push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const;
  const Tensor& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const;
  const std::vector<std::size_t>& inputs(std::size_t id) const;

  /// Gradient accumulator of node `id`, allocated on first use, or nullptr
  /// when the node does not require a gradient.
  Tensor* grad_slot(std::size_t id);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every node. The loss must be
  /// a 1x1 node of this graph and backward may run once per graph.
  void backward(Var loss);
  bool backward_done() const noexcept { return backward_done_; }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  const Node& node(std::size_t id) const;

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

/// Differentiable operations. All operate on rank-2 tensors; nothing
/// broadcasts implicitly, row/column broadcasts are separate named ops.
namespace ops {

Var matmul(Var a, Var b);     // a * b
Var matmul_nt(Var a, Var b);  // a * b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_row(Var x, Var row);  // x (n x d) + row (1 x d) on every row
Var add_col(Var x, Var col);  // x (n x d) + col (n x 1) on every column
Var gelu(Var x);
Var relu(Var x);

inline constexpr double kLayerNormEps = 1e-5;
Var layer_norm(Var x, Var gain, Var bias);  // row-wise; gain, bias are 1 x d

/// Rows of `table` selected by `ids`; backward scatter-adds into the table.
Var embedding(Var table, std::span<const std::int32_t> ids);

inline constexpr double kMaskedScore = -1e30;

/// Causal mask for a query block that follows `mem_len` memory positions:
/// entry (i, j) is replaced by kMaskedScore when j > mem_len + i.
Var causal_mask(Var scores, std::size_t mem_len);

/// Relative shift: out(i, j) = x(i, mem_len + i - j) when that distance is
/// a valid column, 0 otherwise. Converts per-distance scores (columns
/// indexed by distance) into per-key scores.
Var rel_shift(Var x, std::size_t mem_len);

Var softmax_rows(Var x);
Var log_softmax_rows(Var x);

/// out(i, 0) = x(i, index[i]).
Var pick(Var x, std::span<const std::int32_t> index);
/// out(:, j) = x(:, index[j]).
Var gather_cols(Var x, std::span<const std::int32_t> index);

Var sum(Var x);   // 1 x 1
Var mean(Var x);  // 1 x 1

Var slice_rows(Var x, std::size_t begin, std::size_t count);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);

/// Elementwise multiply by a constant mask (used for dropout).
Var mask_mul(Var x, Tensor mask);

}  // namespace ops

}  // namespace dynxl
