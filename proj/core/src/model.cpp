#include "dynxl/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dynxl/errors.hpp"

namespace dynxl {

const char* to_string(OutputLayer kind) {
  return kind == OutputLayer::full ? "full" : "adaptive";
}

OutputLayer output_layer_from_string(const std::string& text) {
  if (text == "full") return OutputLayer::full;
  if (text == "adaptive") return OutputLayer::adaptive;
  throw ConfigError("model.output_layer: expected full or adaptive, got '" + text + "'");
}

namespace {

void fail(const std::string& field, const std::string& why) {
  throw ConfigError("model." + field + ": " + why);
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 1) fail("vocab_size", "must be at least 1");
  if (d_model < 1) fail("d_model", "must be positive");
  if (n_heads < 1) fail("n_heads", "must be positive");
  if (d_head < 1) fail("d_head", "must be positive");
  if (d_model != n_heads * d_head) {
    fail("d_model", std::to_string(d_model) + " != n_heads x d_head = " + std::to_string(n_heads) +
                        " x " + std::to_string(d_head));
  }
  if (d_ff < 1) fail("d_ff", "must be positive");
  if (segment_len < 1) fail("segment_len", "must be at least 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate", "must lie in [0, 1)");
  if (!cluster_order.empty()) {
    if (cluster_order.size() != vocab_size) fail("cluster_order", "must list every token once");
    std::vector<bool> seen(vocab_size, false);
    for (TokenId t : cluster_order) {
      if (t < 0 || static_cast<std::size_t>(t) >= vocab_size || seen[t]) {
        fail("cluster_order", "must be a permutation of the token ids");
      }
      seen[t] = true;
    }
  }
  if (output_layer == OutputLayer::adaptive) {
    if (adaptive_cutoffs.empty()) fail("adaptive_cutoffs", "adaptive output needs at least one cutoff");
    if (adaptive_cutoffs.front() < 1) fail("adaptive_cutoffs", "head cluster must be non-empty");
    for (std::size_t i = 1; i < adaptive_cutoffs.size(); ++i) {
      if (adaptive_cutoffs[i] <= adaptive_cutoffs[i - 1]) fail("adaptive_cutoffs", "must be strictly increasing");
    }
    if (adaptive_cutoffs.back() > vocab_size) fail("adaptive_cutoffs", "must not exceed vocab_size");
    if (adaptive_clusters(*this).size() > 3) fail("adaptive_cutoffs", "at most two tail clusters");
    if (adaptive_tail_shrink < 1 || d_model / adaptive_tail_shrink < 1) {
      fail("adaptive_tail_shrink", "tail projection dimension d_model / shrink must be positive");
    }
  }
}

std::vector<TokenId> frequency_order(std::span<const std::uint64_t> counts) {
  std::vector<TokenId> order(counts.size());
  std::iota(order.begin(), order.end(), TokenId{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](TokenId a, TokenId b) { return counts[a] > counts[b]; });
  return order;
}

std::vector<AdaptiveCluster> adaptive_clusters(const ModelConfig& config) {
  std::vector<AdaptiveCluster> clusters;
  std::size_t begin = 0;
  for (std::size_t c : config.adaptive_cutoffs) {
    if (c > begin) clusters.push_back({begin, c});
    begin = c;
  }
  if (begin < config.vocab_size) clusters.push_back({begin, config.vocab_size});
  return clusters;
}

namespace {

std::string layer_name(std::size_t l, const char* leaf) {
  return "layers." + std::to_string(l) + "." + leaf;
}

Tensor normal_tensor(Shape shape, std::mt19937_64& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  constexpr double kStd = 0.02;
  std::mt19937_64 rng(seed);
  const std::size_t d = config.d_model;
  ModelParams p;
  p.config = config;
  ParamSet& t = p.tensors;
  // One extra row: the start-of-stream input embedding.
  t.add("embed.weight", normal_tensor({config.vocab_size + 1, d}, rng, kStd));
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    t.add(layer_name(l, "ln1.gain"), Tensor({1, d}, 1.0));
    t.add(layer_name(l, "ln1.bias"), Tensor({1, d}));
    t.add(layer_name(l, "attn.w_q"), normal_tensor({d, d}, rng, kStd));
    t.add(layer_name(l, "attn.w_k"), normal_tensor({d, d}, rng, kStd));
    t.add(layer_name(l, "attn.w_v"), normal_tensor({d, d}, rng, kStd));
    t.add(layer_name(l, "attn.w_r"), normal_tensor({d, d}, rng, kStd));
    t.add(layer_name(l, "attn.content_bias"), Tensor({config.n_heads, config.d_head}));
    t.add(layer_name(l, "attn.position_bias"), Tensor({config.n_heads, config.d_head}));
    t.add(layer_name(l, "attn.w_o"), normal_tensor({d, d}, rng, kStd));
    t.add(layer_name(l, "ln2.gain"), Tensor({1, d}, 1.0));
    t.add(layer_name(l, "ln2.bias"), Tensor({1, d}));
    t.add(layer_name(l, "ff.w1"), normal_tensor({d, config.d_ff}, rng, kStd));
    t.add(layer_name(l, "ff.b1"), Tensor({1, config.d_ff}));
    t.add(layer_name(l, "ff.w2"), normal_tensor({config.d_ff, d}, rng, kStd));
    t.add(layer_name(l, "ff.b2"), Tensor({1, d}));
  }
  t.add("ln_f.gain", Tensor({1, d}, 1.0));
  t.add("ln_f.bias", Tensor({1, d}));
  if (config.output_layer == OutputLayer::full) {
    t.add("out.weight", normal_tensor({d, config.vocab_size}, rng, kStd));
    t.add("out.bias", Tensor({1, config.vocab_size}));
  } else {
    const auto clusters = adaptive_clusters(config);
    const std::size_t head_width = clusters[0].end + (clusters.size() - 1);
    const std::size_t d_tail = d / config.adaptive_tail_shrink;
    t.add("out.head.weight", normal_tensor({d, head_width}, rng, kStd));
    t.add("out.head.bias", Tensor({1, head_width}));
    for (std::size_t k = 1; k < clusters.size(); ++k) {
      const std::string prefix = "out.tail" + std::to_string(k - 1);
      const std::size_t width = clusters[k].end - clusters[k].begin;
      t.add(prefix + ".proj", normal_tensor({d, d_tail}, rng, kStd));
      t.add(prefix + ".weight", normal_tensor({d_tail, width}, rng, kStd));
      t.add(prefix + ".bias", Tensor({1, width}));
    }
  }
  return p;
}

SegmentMemory empty_memory(const ModelConfig& config) {
  SegmentMemory m;
  m.layers.resize(config.n_layers);
  return m;
}

Tensor sinusoid_table(std::size_t count, std::size_t dim) {
  Tensor table({count, dim});
  for (std::size_t pos = 0; pos < count; ++pos) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double inv_freq =
          std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * inv_freq;
      table.at(pos, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return table;
}

AttentionOutput rel_attention(Var queries, Var keys, Var values, Var rel_pos, Var content_bias,
                              Var position_bias, std::size_t mem_len) {
  const std::size_t n = queries.value().rows();
  const std::size_t klen = keys.value().rows();
  const std::size_t dh = queries.value().cols();
  if (klen != mem_len + n || values.value().rows() != klen || rel_pos.value().rows() != klen) {
    throw StateError("rel_attention: keys, values and positions must cover memory + queries");
  }
  if (keys.value().cols() != dh || rel_pos.value().cols() != dh) {
    throw StateError("rel_attention: head dimensions differ");
  }
  using namespace ops;
  Var content = matmul_nt(add_row(queries, content_bias), keys);
  Var position = rel_shift(matmul_nt(add_row(queries, position_bias), rel_pos), mem_len);
  Var scores = scale(add(content, position), 1.0 / std::sqrt(static_cast<double>(dh)));
  Var weights = softmax_rows(causal_mask(scores, mem_len));
  return {matmul(weights, values), weights};
}

namespace {

// Parameter leaves addressed by name.
struct Bound {
  const ParamSet& set;
  std::span<const Var> vars;
  Var operator()(const std::string& name) const { return vars[set.index(name)]; }
};

Var dropout(Var x, const ForwardOptions& opt, double rate) {
  if (!opt.training || rate <= 0.0) return x;
  if (opt.rng == nullptr) throw StateError("forward_segment: dropout requires an rng");
  std::bernoulli_distribution keep(1.0 - rate);
  Tensor mask(x.value().shape());
  const double s = 1.0 / (1.0 - rate);
  for (auto& v : mask.values()) v = keep(*opt.rng) ? s : 0.0;
  return ops::mask_mul(x, std::move(mask));
}

Var output_logprobs(const ModelParams& p, const Bound& b, Var hidden) {
  using namespace ops;
  const ModelConfig& c = p.config;
  if (c.output_layer == OutputLayer::full) {
    return log_softmax_rows(add_row(matmul(hidden, b("out.weight")), b("out.bias")));
  }
  const auto clusters = adaptive_clusters(c);
  const std::size_t head_size = clusters[0].end;
  Var head = log_softmax_rows(add_row(matmul(hidden, b("out.head.weight")), b("out.head.bias")));
  std::vector<Var> parts{clusters.size() == 1 ? head : slice_cols(head, 0, head_size)};
  for (std::size_t k = 1; k < clusters.size(); ++k) {
    const std::string prefix = "out.tail" + std::to_string(k - 1);
    Var projected = matmul(hidden, b(prefix + ".proj"));
    Var tail = log_softmax_rows(add_row(matmul(projected, b(prefix + ".weight")), b(prefix + ".bias")));
    parts.push_back(add_col(tail, slice_cols(head, head_size + k - 1, 1)));
  }
  Var ranked = parts.size() == 1 ? parts[0] : concat_cols(parts);
  if (c.cluster_order.empty()) return ranked;
  std::vector<TokenId> rank_of(c.vocab_size);
  for (std::size_t r = 0; r < c.cluster_order.size(); ++r) {
    rank_of[static_cast<std::size_t>(c.cluster_order[r])] = static_cast<TokenId>(r);
  }
  return gather_cols(ranked, rank_of);
}

}  // namespace

SegmentForward forward_segment(Graph& graph, const ModelParams& params,
                               std::span<const TokenId> tokens, const SegmentMemory& memory,
                               const ForwardOptions& options) {
  using namespace ops;
  const ModelConfig& c = params.config;
  const std::size_t n = tokens.size();
  if (n == 0) throw DataError("forward_segment: empty segment");
  for (TokenId t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= c.vocab_size) {
      throw DataError("forward_segment: token " + std::to_string(t) + " outside vocabulary of " +
                      std::to_string(c.vocab_size));
    }
  }
  if (memory.layers.size() != c.n_layers) {
    throw StateError("forward_segment: memory has " + std::to_string(memory.layers.size()) +
                     " layers, model has " + std::to_string(c.n_layers));
  }
  const std::size_t mem = memory.length();
  for (const auto& m : memory.layers) {
    if (m.rows() != mem || (mem > 0 && m.cols() != c.d_model) || mem > c.mem_len) {
      throw StateError("forward_segment: memory shape mismatch");
    }
  }
  if (memory.last_token >= static_cast<TokenId>(c.vocab_size)) {
    throw StateError("forward_segment: memory refers to a token outside the vocabulary");
  }

  SegmentForward out;
  out.params.reserve(params.tensors.size());
  for (const auto& t : params.tensors.tensors()) {
    out.params.push_back(graph.leaf(t, options.params_require_grad));
  }
  const Bound b{params.tensors, out.params};

  // Inputs are the previous tokens; the reserved last row starts a stream.
  std::vector<TokenId> inputs(n);
  inputs[0] = memory.last_token < 0 ? static_cast<TokenId>(c.vocab_size) : memory.last_token;
  for (std::size_t i = 1; i < n; ++i) inputs[i] = tokens[i - 1];
  Var h = dropout(embedding(b("embed.weight"), inputs), options, c.dropout_rate);

  out.memory.layers.resize(c.n_layers);
  // The carried input token is part of the memory, so mem_len = 0 makes
  // segments fully independent.
  out.memory.last_token = c.mem_len > 0 ? tokens.back() : -1;
  const std::size_t klen = mem + n;
  const std::size_t dh = c.d_head;
  Tensor positions = c.n_layers > 0 ? sinusoid_table(klen, c.d_model) : Tensor();

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    // Cache this layer's input states, newest last, trimmed to mem_len.
    const Tensor& hv = h.value();
    const std::size_t keep = std::min(c.mem_len, klen);
    if (keep > 0) {
      Tensor next({keep, c.d_model});
      const std::size_t skip = klen - keep;
      for (std::size_t r = 0; r < keep; ++r) {
        const std::size_t src = skip + r;
        auto from = src < mem ? memory.layers[l].row(src) : hv.row(src - mem);
        std::copy(from.begin(), from.end(), next.row(r).begin());
      }
      out.memory.layers[l] = std::move(next);
    }

    Var context = h;
    if (mem > 0) {
      const Var parts[] = {graph.constant(memory.layers[l]), h};
      context = concat_rows(parts);
    }
    Var normed = layer_norm(context, b(layer_name(l, "ln1.gain")), b(layer_name(l, "ln1.bias")));
    Var normed_q = mem > 0 ? slice_rows(normed, mem, n) : normed;
    Var q = matmul(normed_q, b(layer_name(l, "attn.w_q")));
    Var k = matmul(normed, b(layer_name(l, "attn.w_k")));
    Var v = matmul(normed, b(layer_name(l, "attn.w_v")));
    Var r = matmul(graph.constant(positions), b(layer_name(l, "attn.w_r")));
    Var u = b(layer_name(l, "attn.content_bias"));
    Var pb = b(layer_name(l, "attn.position_bias"));
    std::vector<Var> heads;
    heads.reserve(c.n_heads);
    for (std::size_t hd = 0; hd < c.n_heads; ++hd) {
      const std::size_t off = hd * dh;
      auto head = rel_attention(slice_cols(q, off, dh), slice_cols(k, off, dh), slice_cols(v, off, dh),
                                slice_cols(r, off, dh), slice_rows(u, hd, 1), slice_rows(pb, hd, 1), mem);
      heads.push_back(head.values);
    }
    Var attended = heads.size() == 1 ? heads[0] : concat_cols(heads);
    Var attn_out = dropout(matmul(attended, b(layer_name(l, "attn.w_o"))), options, c.dropout_rate);
    h = add(h, attn_out);

    Var ff_in = layer_norm(h, b(layer_name(l, "ln2.gain")), b(layer_name(l, "ln2.bias")));
    Var hidden = gelu(add_row(matmul(ff_in, b(layer_name(l, "ff.w1"))), b(layer_name(l, "ff.b1"))));
    Var ff_out = add_row(matmul(hidden, b(layer_name(l, "ff.w2"))), b(layer_name(l, "ff.b2")));
    h = add(h, dropout(ff_out, options, c.dropout_rate));
  }

  Var final_hidden = layer_norm(h, b("ln_f.gain"), b("ln_f.bias"));
  out.logprobs = output_logprobs(params, b, final_hidden);
  Var picked = pick(out.logprobs, tokens);
  out.loss = scale(sum(picked), -1.0 / static_cast<double>(n));
  out.token_logprob.assign(picked.value().values().begin(), picked.value().values().end());
  return out;
}

double adaptive_softmax_logprob(std::span<const double> hidden, TokenId target,
                                const ModelParams& params) {
  const ModelConfig& c = params.config;
  if (c.output_layer != OutputLayer::adaptive) {
    throw StateError("adaptive_softmax_logprob: model has a full output layer");
  }
  if (hidden.size() != c.d_model) throw StateError("adaptive_softmax_logprob: hidden size mismatch");
  if (target < 0 || static_cast<std::size_t>(target) >= c.vocab_size) {
    throw DataError("adaptive_softmax_logprob: target outside vocabulary");
  }
  std::size_t rank = static_cast<std::size_t>(target);
  if (!c.cluster_order.empty()) {
    rank = static_cast<std::size_t>(
        std::find(c.cluster_order.begin(), c.cluster_order.end(), target) - c.cluster_order.begin());
  }
  auto affine = [](std::span<const double> x, const Tensor& w, const Tensor* bias) {
    std::vector<double> y(w.cols(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) y[j] += x[i] * w.at(i, j);
    if (bias)
      for (std::size_t j = 0; j < y.size(); ++j) y[j] += (*bias)[j];
    return y;
  };
  auto log_normalizer = [](const std::vector<double>& z) {
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    return mx + std::log(s);
  };
  const auto clusters = adaptive_clusters(c);
  const ParamSet& t = params.tensors;
  const auto head = affine(hidden, t.at("out.head.weight"), &t.at("out.head.bias"));
  const double head_lse = log_normalizer(head);
  if (rank < clusters[0].end) return head[rank] - head_lse;
  for (std::size_t k = 1; k < clusters.size(); ++k) {
    if (rank >= clusters[k].end) continue;
    const std::string prefix = "out.tail" + std::to_string(k - 1);
    const auto projected = affine(hidden, t.at(prefix + ".proj"), nullptr);
    const auto tail = affine(projected, t.at(prefix + ".weight"), &t.at(prefix + ".bias"));
    const double gate = head[clusters[0].end + k - 1] - head_lse;
    return gate + tail[rank - clusters[k].begin] - log_normalizer(tail);
  }
  throw StateError("adaptive_softmax_logprob: rank outside every cluster");
}

}  // namespace dynxl
