#include "dynxl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "dynxl/errors.hpp"

namespace dynxl {

const Tensor& Var::value() const { return graph->value(id); }
const Tensor& Var::grad() const { return graph->grad(id); }

Var Graph::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  if (backward_done_) throw StateError("graph: cannot extend a graph after backward");
  Node n;
  n.value = std::move(value);
  for (auto in : inputs) {
    if (in >= nodes_.size()) throw StateError("graph: input refers to a later node");
    n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  }
  n.inputs = std::move(inputs);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Graph::Node& Graph::node(std::size_t id) const {
  if (id >= nodes_.size()) throw StateError("graph: unknown node " + std::to_string(id));
  return nodes_[id];
}

const Tensor& Graph::value(std::size_t id) const { return node(id).value; }

const Tensor& Graph::grad(std::size_t id) const {
  const Node& n = node(id);
  if (!backward_done_) throw StateError("graph: gradient requested before backward");
  if (!n.requires_grad) throw StateError("graph: node does not require a gradient");
  return n.grad;
}

bool Graph::requires_grad(std::size_t id) const { return node(id).requires_grad; }

const std::vector<std::size_t>& Graph::inputs(std::size_t id) const { return node(id).inputs; }

Tensor* Graph::grad_slot(std::size_t id) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return &n.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph != this || loss.id >= nodes_.size()) {
    throw StateError("graph: backward requested for a node outside this graph (no forward pass)");
  }
  if (backward_done_) throw StateError("graph: backward already ran on this graph");
  if (nodes_[loss.id].value.size() != 1) throw StateError("graph: loss must be scalar");
  backward_done_ = true;
  for (auto& n : nodes_) {
    if (n.requires_grad && n.grad.empty()) n.grad = Tensor(n.value.shape());
  }
  if (!nodes_[loss.id].requires_grad) return;
  nodes_[loss.id].grad[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward) n.backward(*this, i);
  }
}

namespace ops {
namespace {

Graph& graph_of(Var a) {
  if (a.graph == nullptr) throw StateError("ops: variable is not attached to a graph");
  return *a.graph;
}

Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph) throw StateError("ops: operands belong to different graphs");
  return graph_of(a);
}

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw StateError(std::string(what) + ": expected a rank-2 tensor");
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  Tensor out({av.rows(), bv.cols()});
  kernels::gemm(av, false, bv, false, out, false);
  return g.push(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Graph& gr, std::size_t self) {
    const Tensor& dy = gr.grad(self);
    if (Tensor* da = gr.grad_slot(ai)) kernels::gemm(dy, false, gr.value(bi), true, *da, true);
    if (Tensor* db = gr.grad_slot(bi)) kernels::gemm(gr.value(ai), true, dy, false, *db, true);
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul_nt");
  require_rank2(bv, "matmul_nt");
  Tensor out({av.rows(), bv.rows()});
  kernels::gemm(av, false, bv, true, out, false);
  return g.push(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Graph& gr, std::size_t self) {
    const Tensor& dy = gr.grad(self);
    if (Tensor* da = gr.grad_slot(ai)) kernels::gemm(dy, false, gr.value(bi), false, *da, true);
    if (Tensor* db = gr.grad_slot(bi)) kernels::gemm(dy, true, gr.value(ai), false, *db, true);
  });
}

namespace {

template <typename Fwd, typename Bwd>
Var binary_elementwise(Var a, Var b, const char* what, Fwd fwd, Bwd bwd) {
  Graph& g = graph_of(a, b);
  require_same_shape(a.value(), b.value(), what);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  return g.push(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id, bwd](Graph& gr, std::size_t self) {
    bwd(gr, self, ai, bi);
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](Graph& gr, std::size_t self, std::size_t ai, std::size_t bi) {
        const Tensor& dy = gr.grad(self);
        if (Tensor* da = gr.grad_slot(ai))
          for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i];
        if (Tensor* db = gr.grad_slot(bi))
          for (std::size_t i = 0; i < dy.size(); ++i) (*db)[i] += dy[i];
      });
}

Var sub(Var a, Var b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](Graph& gr, std::size_t self, std::size_t ai, std::size_t bi) {
        const Tensor& dy = gr.grad(self);
        if (Tensor* da = gr.grad_slot(ai))
          for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i];
        if (Tensor* db = gr.grad_slot(bi))
          for (std::size_t i = 0; i < dy.size(); ++i) (*db)[i] -= dy[i];
      });
}

Var mul(Var a, Var b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](Graph& gr, std::size_t self, std::size_t ai, std::size_t bi) {
        const Tensor& dy = gr.grad(self);
        const Tensor& av = gr.value(ai);
        const Tensor& bv = gr.value(bi);
        if (Tensor* da = gr.grad_slot(ai))
          for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i] * bv[i];
        if (Tensor* db = gr.grad_slot(bi))
          for (std::size_t i = 0; i < dy.size(); ++i) (*db)[i] += dy[i] * av[i];
      });
}

Var scale(Var a, double s) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (auto& v : out.values()) v *= s;
  return g.push(std::move(out), {a.id}, [ai = a.id, s](Graph& gr, std::size_t self) {
    const Tensor& dy = gr.grad(self);
    if (Tensor* da = gr.grad_slot(ai))
      for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i] * s;
  });
}

Var add_row(Var x, Var row) {
  Graph& g = graph_of(x, row);
  const Tensor& xv = x.value();
  const Tensor& rv = row.value();
  require_rank2(xv, "add_row");
  if (rv.rows() != 1 || rv.cols() != xv.cols()) {
    throw StateError("add_row: row must be 1 x " + std::to_string(xv.cols()) + ", got " +
                     shape_string(rv.shape()));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) += rv[j];
  return g.push(std::move(out), {x.id, row.id}, [xi = x.id, ri = row.id](Graph& gr, std::size_t self) {
    const Tensor& dy = gr.grad(self);
    if (Tensor* dx = gr.grad_slot(xi))
      for (std::size_t i = 0; i < dy.size(); ++i) (*dx)[i] += dy[i];
    if (Tensor* dr = gr.grad_slot(ri))
      for (std::size_t i = 0; i < dy.rows(); ++i)
        for (std::size_t j = 0; j < dy.cols(); ++j) (*dr)[j] += dy.at(i, j);
  });
}

Var add_col(Var x, Var col) {
  Graph& g = graph_of(x, col);
  const Tensor& xv = x.value();
  const Tensor& cv = col.value();
  require_rank2(xv, "add_col");
  if (cv.cols() != 1 || cv.rows() != xv.rows()) {
    throw StateError("add_col: column must be " + std::to_string(xv.rows()) + " x 1, got " +
                     shape_string(cv.shape()));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) += cv[i];
  return g.push(std::move(out), {x.id, col.id}, [xi = x.id, ci = col.id](Graph& gr, std::size_t self) {
    const Tensor& dy = gr.grad(self);
    if (Tensor* dx = gr.grad_slot(xi))
      for (std::size_t i = 0; i < dy.size(); ++i) (*dx)[i] += dy[i];
    if (Tensor* dc = gr.grad_slot(ci))
      for (std::size_t i = 0; i < dy.rows(); ++i)
        for (std::size_t j = 0; j < dy.cols(); ++j) (*dc)[i] += dy.at(i, j);
  });
}

Var gelu(Var x) {
  Graph& g = graph_of(x);
  constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double c = 0.044715;
  Tensor out = x.value();
  for (auto& v : out.values()) v = 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v)));
  return g.push(std::move(out), {x.id}, [xi = x.id](Graph& gr, std::size_t self) {
    Tensor* dx = gr.grad_slot(xi);
    if (!dx) return;
    const Tensor& dy = gr.grad(self);
    const Tensor& xv = gr.value(xi);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const double v = xv[i];
      const double t = std::tanh(k * (v + c * v * v * v));
      const double dt = (1.0 - t * t) * k * (1.0 + 3.0 * c * v * v);
      (*dx)[i] += dy[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
    }
  });
}

Var relu(Var x) {
  Graph& g = graph_of(x);
  Tensor out = x.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return g.push(std::move(out), {x.id}, [xi = x.id](Graph& gr, std::size_t self) {
    Tensor* dx = gr.grad_slot(xi);
    if (!dx) return;
    const Tensor& dy = gr.grad(self);
    const Tensor& xv = gr.value(xi);
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (xv[i] > 0.0) (*dx)[i] += dy[i];
  });
}

Var layer_norm(Var x, Var gain, Var bias) {
  Graph& g = graph_of(x, gain);
  graph_of(x, bias);
  const Tensor& xv = x.value();
  require_rank2(xv, "layer_norm");
  const std::size_t n = xv.rows();
  const std::size_t d = xv.cols();
  if (gain.value().size() != d || bias.value().size() != d ||
      gain.value().rows() != 1 || bias.value().rows() != 1) {
    throw StateError("layer_norm: gain and bias must be 1 x " + std::to_string(d));
  }
  Tensor normed({n, d});
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = xv.row(i);
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < d; ++j) normed.at(i, j) = (row[j] - mu) * inv_std[i];
  }
  Tensor out({n, d});
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = normed.at(i, j) * gv[j] + bv[j];

  return g.push(std::move(out), {x.id, gain.id, bias.id},
                [xi = x.id, gi = gain.id, bi = bias.id, normed = std::move(normed),
                 inv_std = std::move(inv_std)](Graph& gr, std::size_t self) {
                  const Tensor& dy = gr.grad(self);
                  const Tensor& gv = gr.value(gi);
                  const std::size_t rows = dy.rows();
                  const std::size_t cols = dy.cols();
                  if (Tensor* dg = gr.grad_slot(gi))
                    for (std::size_t i = 0; i < rows; ++i)
                      for (std::size_t j = 0; j < cols; ++j) (*dg)[j] += dy.at(i, j) * normed.at(i, j);
                  if (Tensor* db = gr.grad_slot(bi))
                    for (std::size_t i = 0; i < rows; ++i)
                      for (std::size_t j = 0; j < cols; ++j) (*db)[j] += dy.at(i, j);
                  Tensor* dx = gr.grad_slot(xi);
                  if (!dx) return;
                  const double inv_d = 1.0 / static_cast<double>(cols);
                  for (std::size_t i = 0; i < rows; ++i) {
                    double mean_dn = 0.0;
                    double mean_dn_n = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) {
                      const double dn = dy.at(i, j) * gv[j];
                      mean_dn += dn;
                      mean_dn_n += dn * normed.at(i, j);
                    }
                    mean_dn *= inv_d;
                    mean_dn_n *= inv_d;
                    for (std::size_t j = 0; j < cols; ++j) {
                      const double dn = dy.at(i, j) * gv[j];
                      dx->at(i, j) += inv_std[i] * (dn - mean_dn - normed.at(i, j) * mean_dn_n);
                    }
                  }
                });
}

Var embedding(Var table, std::span<const std::int32_t> ids) {
  Graph& g = graph_of(table);
  const Tensor& tv = table.value();
  require_rank2(tv, "embedding");
  if (ids.empty()) throw StateError("embedding: empty id list");
  const std::size_t d = tv.cols();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows()) {
      throw DataError("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                      std::to_string(tv.rows()) + " rows");
    }
    std::copy_n(tv.row(static_cast<std::size_t>(ids[i])).data(), d, out.row(i).data());
  }
  return g.push(std::move(out), {table.id},
                [ti = table.id, ids = std::vector<std::int32_t>(ids.begin(), ids.end())](
                    Graph& gr, std::size_t self) {
                  Tensor* dt = gr.grad_slot(ti);
                  if (!dt) return;
                  const Tensor& dy = gr.grad(self);
                  const std::size_t d = dy.cols();
                  for (std::size_t i = 0; i < ids.size(); ++i) {
                    auto dst = dt->row(static_cast<std::size_t>(ids[i]));
                    for (std::size_t j = 0; j < d; ++j) dst[j] += dy.at(i, j);
                  }
                });
}

Var causal_mask(Var scores, std::size_t mem_len) {
  Graph& g = graph_of(scores);
  const Tensor& sv = scores.value();
  require_rank2(sv, "causal_mask");
  if (sv.cols() != mem_len + sv.rows()) {
    throw StateError("causal_mask: key length " + std::to_string(sv.cols()) +
                     " != memory " + std::to_string(mem_len) + " + queries " +
                     std::to_string(sv.rows()));
  }
  Tensor out = sv;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = mem_len + i + 1; j < out.cols(); ++j) out.at(i, j) = kMaskedScore;
  return g.push(std::move(out), {scores.id}, [si = scores.id, mem_len](Graph& gr, std::size_t self) {
    Tensor* ds = gr.grad_slot(si);
    if (!ds) return;
    const Tensor& dy = gr.grad(self);
    for (std::size_t i = 0; i < dy.rows(); ++i)
      for (std::size_t j = 0; j <= mem_len + i && j < dy.cols(); ++j) ds->at(i, j) += dy.at(i, j);
  });
}

Var rel_shift(Var x, std::size_t mem_len) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  require_rank2(xv, "rel_shift");
  const std::size_t n = xv.rows();
  const std::size_t klen = xv.cols();
  if (klen != mem_len + n) {
    throw StateError("rel_shift: distance columns " + std::to_string(klen) + " != memory " +
                     std::to_string(mem_len) + " + queries " + std::to_string(n));
  }
  Tensor out({n, klen});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= mem_len + i; ++j) out.at(i, j) = xv.at(i, mem_len + i - j);
  return g.push(std::move(out), {x.id}, [xi = x.id, mem_len](Graph& gr, std::size_t self) {
    Tensor* dx = gr.grad_slot(xi);
    if (!dx) return;
    const Tensor& dy = gr.grad(self);
    for (std::size_t i = 0; i < dy.rows(); ++i)
      for (std::size_t j = 0; j <= mem_len + i; ++j) dx->at(i, mem_len + i - j) += dy.at(i, j);
  });
}

namespace {

void check_finite_rows(const Tensor& t, const char* what) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) throw NumericDomainError(std::string(what) + ": non-finite input");
  }
}

}  // namespace

Var softmax_rows(Var x) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  require_rank2(xv, "softmax_rows");
  check_finite_rows(xv, "softmax_rows");
  Tensor out({xv.rows(), xv.cols()});
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    auto in = xv.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (auto& v : o) v /= z;
  }
  return g.push(std::move(out), {x.id}, [xi = x.id](Graph& gr, std::size_t self) {
    Tensor* dx = gr.grad_slot(xi);
    if (!dx) return;
    const Tensor& dy = gr.grad(self);
    const Tensor& p = gr.value(self);
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < p.cols(); ++j) dot += dy.at(i, j) * p.at(i, j);
      for (std::size_t j = 0; j < p.cols(); ++j) dx->at(i, j) += p.at(i, j) * (dy.at(i, j) - dot);
    }
  });
}

Var log_softmax_rows(Var x) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  require_rank2(xv, "log_softmax_rows");
  check_finite_rows(xv, "log_softmax_rows");
  Tensor out({xv.rows(), xv.cols()});
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    auto in = xv.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (double v : in) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < in.size(); ++j) o[j] = in[j] - lse;
  }
  return g.push(std::move(out), {x.id}, [xi = x.id](Graph& gr, std::size_t self) {
    Tensor* dx = gr.grad_slot(xi);
    if (!dx) return;
    const Tensor& dy = gr.grad(self);
    const Tensor& lp = gr.value(self);
    for (std::size_t i = 0; i < lp.rows(); ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < lp.cols(); ++j) total += dy.at(i, j);
      for (std::size_t j = 0; j < lp.cols(); ++j)
        dx->at(i, j) += dy.at(i, j) - std::exp(lp.at(i, j)) * total;
    }
  });
}

Var pick(Var x, std::span<const std::int32_t> index) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  require_rank2(xv, "pick");
  if (index.size() != xv.rows()) throw StateError("pick: one index per row required");
  Tensor out({xv.rows(), 1});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= xv.cols()) {
      throw DataError("pick: index " + std::to_string(index[i]) + " out of range");
    }
    out[i] = xv.at(i, static_cast<std::size_t>(index[i]));
  }
  return g.push(std::move(out), {x.id},
                [xi = x.id, idx = std::vector<std::int32_t>(index.begin(), index.end())](
                    Graph& gr, std::size_t self) {
                  Tensor* dx = gr.grad_slot(xi);
                  if (!dx) return;
                  const Tensor& dy = gr.grad(self);
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    dx->at(i, static_cast<std::size_t>(idx[i])) += dy[i];
                });
}

Var gather_cols(Var x, std::span<const std::int32_t> index) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  require_rank2(xv, "gather_cols");
  if (index.empty()) throw StateError("gather_cols: empty index");
  Tensor out({xv.rows(), index.size()});
  for (std::size_t j = 0; j < index.size(); ++j) {
    if (index[j] < 0 || static_cast<std::size_t>(index[j]) >= xv.cols()) {
      throw StateError("gather_cols: index " + std::to_string(index[j]) + " out of range");
    }
  }
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < index.size(); ++j)
      out.at(i, j) = xv.at(i, static_cast<std::size_t>(index[j]));
  return g.push(std::move(out), {x.id},
                [xi = x.id, idx = std::vector<std::int32_t>(index.begin(), index.end())](
                    Graph& gr, std::size_t self) {
                  Tensor* dx = gr.grad_slot(xi);
                  if (!dx) return;
                  const Tensor& dy = gr.grad(self);
                  for (std::size_t i = 0; i < dy.rows(); ++i)
                    for (std::size_t j = 0; j < idx.size(); ++j)
                      dx->at(i, static_cast<std::size_t>(idx[j])) += dy.at(i, j);
                });
}

Var sum(Var x) {
  Graph& g = graph_of(x);
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return g.push(Tensor({1, 1}, {s}), {x.id}, [xi = x.id](Graph& gr, std::size_t self) {
    Tensor* dx = gr.grad_slot(xi);
    if (!dx) return;
    const double d = gr.grad(self)[0];
    for (auto& v : dx->values()) v += d;
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  require_rank2(xv, "slice_rows");
  if (count == 0 || begin + count > xv.rows()) throw StateError("slice_rows: range out of bounds");
  const std::size_t d = xv.cols();
  Tensor out({count, d});
  std::copy_n(xv.data() + begin * d, count * d, out.data());
  return g.push(std::move(out), {x.id}, [xi = x.id, begin](Graph& gr, std::size_t self) {
    Tensor* dx = gr.grad_slot(xi);
    if (!dx) return;
    const Tensor& dy = gr.grad(self);
    double* dst = dx->data() + begin * dy.cols();
    for (std::size_t i = 0; i < dy.size(); ++i) dst[i] += dy[i];
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  require_rank2(xv, "slice_cols");
  if (count == 0 || begin + count > xv.cols()) throw StateError("slice_cols: range out of bounds");
  Tensor out({xv.rows(), count});
  for (std::size_t i = 0; i < xv.rows(); ++i)
    std::copy_n(xv.row(i).data() + begin, count, out.row(i).data());
  return g.push(std::move(out), {x.id}, [xi = x.id, begin](Graph& gr, std::size_t self) {
    Tensor* dx = gr.grad_slot(xi);
    if (!dx) return;
    const Tensor& dy = gr.grad(self);
    for (std::size_t i = 0; i < dy.rows(); ++i)
      for (std::size_t j = 0; j < dy.cols(); ++j) dx->at(i, begin + j) += dy.at(i, j);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw StateError("concat_rows: no inputs");
  Graph& g = graph_of(parts[0]);
  const std::size_t d = parts[0].value().cols();
  std::size_t n = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    graph_of(parts[0], p);
    require_rank2(p.value(), "concat_rows");
    if (p.value().cols() != d) throw StateError("concat_rows: column counts differ");
    n += p.value().rows();
    ids.push_back(p.id);
  }
  Tensor out({n, d});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), out.data() + offset);
    offset += p.value().size();
  }
  return g.push(std::move(out), ids, [ids](Graph& gr, std::size_t self) {
    const Tensor& dy = gr.grad(self);
    std::size_t off = 0;
    for (auto id : ids) {
      const std::size_t sz = gr.value(id).size();
      if (Tensor* dp = gr.grad_slot(id))
        for (std::size_t i = 0; i < sz; ++i) (*dp)[i] += dy[off + i];
      off += sz;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw StateError("concat_cols: no inputs");
  Graph& g = graph_of(parts[0]);
  const std::size_t n = parts[0].value().rows();
  std::size_t d = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    graph_of(parts[0], p);
    require_rank2(p.value(), "concat_cols");
    if (p.value().rows() != n) throw StateError("concat_cols: row counts differ");
    d += p.value().cols();
    ids.push_back(p.id);
  }
  Tensor out({n, d});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(pv.row(i).data(), pv.cols(), out.row(i).data() + offset);
    offset += pv.cols();
  }
  return g.push(std::move(out), ids, [ids](Graph& gr, std::size_t self) {
    const Tensor& dy = gr.grad(self);
    std::size_t off = 0;
    for (auto id : ids) {
      const std::size_t w = gr.value(id).cols();
      if (Tensor* dp = gr.grad_slot(id))
        for (std::size_t i = 0; i < dy.rows(); ++i)
          for (std::size_t j = 0; j < w; ++j) dp->at(i, j) += dy.at(i, off + j);
      off += w;
    }
  });
}

Var mask_mul(Var x, Tensor mask) {
  Graph& g = graph_of(x);
  require_same_shape(x.value(), mask, "mask_mul");
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return g.push(std::move(out), {x.id}, [xi = x.id, mask = std::move(mask)](Graph& gr, std::size_t self) {
    Tensor* dx = gr.grad_slot(xi);
    if (!dx) return;
    const Tensor& dy = gr.grad(self);
    for (std::size_t i = 0; i < dy.size(); ++i) (*dx)[i] += dy[i] * mask[i];
  });
}

}  // namespace ops

}  // namespace dynxl
