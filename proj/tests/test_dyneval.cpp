#include <doctest.h>

#include <cmath>
#include <random>

#include "dynxl/dyneval.hpp"
#include "dynxl/errors.hpp"
#include "support.hpp"

using namespace dynxl;
using dynxl::test::perturbed_model;
using dynxl::test::random_tokens;
using dynxl::test::tiny_config;

namespace {

// Parameters without a real architecture: update rules only look at tensors.
ModelParams bare_params(std::vector<double> values) {
  ModelParams p;
  const std::size_t n = values.size();
  p.tensors.add("w", Tensor({1, n}, std::move(values)));
  return p;
}

ParamSet grads_of(std::vector<double> values) {
  ParamSet g;
  const std::size_t n = values.size();
  g.add("w", Tensor({1, n}, std::move(values)));
  return g;
}

GradStats uniform_stats(const ParamSet& layout, double c) {
  GradStats s;
  s.rms = layout.zeros_like();
  for (auto& t : s.rms.tensors()) t.fill(c);
  s.segments = 1;
  s.global_mean = c;
  return s;
}

TokenStream stream_of(std::vector<TokenId> ids, std::size_t vocab, Split split = Split::test) {
  return TokenStream(std::move(ids), vocab, split);
}

DynevalConfig config(OptimizerKind kind, double lr, double decay = 0.0) {
  DynevalConfig c;
  c.optimizer = kind;
  c.learning_rate = lr;
  c.decay_rate = decay;
  return c;
}

}  // namespace

TEST_CASE("sgd_update arithmetic") {
  AdaptState s(bare_params({1.0, -2.0}));
  sgd_update(s, grads_of({0.5, 0.0}), 0.1);
  CHECK(s.params().tensors[0][0] == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(s.params().tensors[0][1] == -2.0);
  CHECK(s.updates_applied() == 1);
  CHECK(s.trained().tensors[0][0] == 1.0);

  const ParamSet before = s.params().tensors;
  sgd_update(s, grads_of({3.0, 4.0}), 0.0);
  CHECK(bit_equal(before, s.params().tensors));

  CHECK_THROWS_AS(sgd_update(s, grads_of({NAN, 1.0}), 0.1), AdaptationError);
  CHECK_THROWS_AS(sgd_update(s, grads_of({1.0}), 0.1), AdaptationError);
  try {
    sgd_update(s, grads_of({INFINITY, 1.0}), 0.1);
  } catch (const AdaptationError& e) {
    CHECK(std::string(e.what()).find("w") != std::string::npos);
  }
}

TEST_CASE("sgd: successive updates on a linear loss add up") {
  // L(w) = a * w has the constant gradient a.
  const double a = 0.37, eta = 0.05;
  AdaptState twice(bare_params({0.8}));
  sgd_update(twice, grads_of({a}), eta);
  sgd_update(twice, grads_of({a}), eta);
  AdaptState once(bare_params({0.8}));
  sgd_update(once, grads_of({2.0 * a}), eta);
  CHECK(twice.params().tensors[0][0] == doctest::Approx(once.params().tensors[0][0]).epsilon(1e-15));
  CHECK(once.params().tensors[0][0] == doctest::Approx(0.8 - 2.0 * a * eta).epsilon(1e-15));
}

TEST_CASE("rms_decay_update examples") {
  SUBCASE("hand arithmetic") {
    AdaptState s(bare_params({0.0, 0.0}));
    GradStats stats;
    stats.rms = grads_of({1.0, 4.0});
    stats.segments = 1;
    rms_decay_update(s, grads_of({1.0, 2.0}), stats, 0.1, 0.1, 0.0);
    CHECK(s.params().tensors[0][0] == doctest::Approx(-0.1).epsilon(1e-15));
    CHECK(s.params().tensors[0][1] == doctest::Approx(-0.05).epsilon(1e-15));
  }
  SUBCASE("geometric contraction to the trained weights") {
    AdaptState s(bare_params({0.0}));
    s.params().tensors[0][0] = 1.0;
    const GradStats stats = uniform_stats(s.params().tensors, 1.0);
    for (int k = 1; k <= 10; ++k) {
      rms_decay_update(s, grads_of({0.0}), stats, 0.0, 0.5, 1e-8);
      CHECK(s.params().tensors[0][0] == std::ldexp(1.0, -k));
    }
  }
  SUBCASE("uniform statistics reduce to sgd") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> dist;
    std::vector<double> w(6), g(6);
    for (auto& v : w) v = dist(rng);
    for (auto& v : g) v = dist(rng);
    const double c = 0.37, eta = 0.02;
    AdaptState a(bare_params(w)), b(bare_params(w));
    rms_decay_update(a, grads_of(g), uniform_stats(a.params().tensors, c), eta, 0.0, 0.0);
    sgd_update(b, grads_of(g), eta / c);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(std::abs(a.params().tensors[0][i] - b.params().tensors[0][i]) <=
            1e-12 * std::abs(b.params().tensors[0][i]));
    }
  }
  SUBCASE("zero statistic") {
    AdaptState s(bare_params({1.0, 1.0}));
    GradStats stats;
    stats.rms = grads_of({0.0, 1.0});
    rms_decay_update(s, grads_of({0.0, 1.0}), stats, 0.1, 0.0, 0.0);
    CHECK(s.params().tensors[0][0] == 1.0);
    CHECK_THROWS_AS(rms_decay_update(s, grads_of({1.0, 1.0}), stats, 0.1, 0.0, 0.0), AdaptationError);
  }
}

TEST_CASE("AdaptState reset restores trained parameters") {
  const ModelParams p = perturbed_model(tiny_config(), 1);
  AdaptState s(p);
  ParamSet g = p.tensors;  // any gradient of matching layout
  sgd_update(s, g, 0.3);
  CHECK_FALSE(bit_equal(s.params().tensors, p.tensors));
  CHECK(bit_equal(s.trained().tensors, p.tensors));
  s.reset();
  CHECK(bit_equal(s.params().tensors, p.tensors));
  CHECK(s.updates_applied() == 0);
  CHECK(s.segment_index() == 0);
}

TEST_CASE("clip_grad_norm") {
  ParamSet g = grads_of({3.0, 4.0});
  CHECK(clip_grad_norm(g, 10.0) == 5.0);
  CHECK(g[0][0] == 3.0);
  CHECK(clip_grad_norm(g, 1.0) == 5.0);
  CHECK(g[0][0] == doctest::Approx(0.6));
  CHECK(g[0][1] == doctest::Approx(0.8));
}

TEST_CASE("collect_grad_stats: three crafted segments") {
  // Segment s has loss a_s * x^2 + b_s * x * y + c_s * y. Gradients are
  // taken here by central differences and the RMS is formed by hand.
  const double a[] = {0.5, -1.0, 2.0}, b[] = {1.5, 0.25, -0.75}, c[] = {-1.0, 3.0, 0.5};
  const double x = 0.7, y = -1.3;
  ParamSet layout;
  layout.add("x", Tensor({1, 1}, x));
  layout.add("y", Tensor({1, 1}, y));
  auto loss = [&](int s, double xv, double yv) { return a[s] * xv * xv + b[s] * xv * yv + c[s] * yv; };

  const GradStats stats = collect_grad_stats(layout, 3, [&](std::size_t s) {
    Graph g;
    Var xv = g.leaf(Tensor({1, 1}, x), true), yv = g.leaf(Tensor({1, 1}, y), true);
    Var l = ops::add(ops::add(ops::scale(ops::mul(xv, xv), a[s]), ops::scale(ops::mul(xv, yv), b[s])),
                     ops::scale(yv, c[s]));
    g.backward(l);
    ParamSet out;
    out.add("x", xv.grad());
    out.add("y", yv.grad());
    return out;
  });

  const double h = 1e-6;
  double sx = 0.0, sy = 0.0;
  for (int s = 0; s < 3; ++s) {
    const double gx = (loss(s, x + h, y) - loss(s, x - h, y)) / (2 * h);
    const double gy = (loss(s, x, y + h) - loss(s, x, y - h)) / (2 * h);
    sx += gx * gx;
    sy += gy * gy;
  }
  const double rx = std::sqrt(sx / 3.0), ry = std::sqrt(sy / 3.0);
  CHECK(stats.segments == 3);
  CHECK(stats.rms.at("x")[0] == doctest::Approx(rx).epsilon(1e-8));
  CHECK(stats.rms.at("y")[0] == doctest::Approx(ry).epsilon(1e-8));
  CHECK(stats.global_mean == doctest::Approx((rx + ry) / 2.0).epsilon(1e-8));
}

TEST_CASE("collect_grad_stats on a model") {
  const ModelConfig c = tiny_config(11);
  const ModelParams p = perturbed_model(c, 2);
  std::mt19937_64 rng(3);
  // Token 10 never occurs, so its embedding row never receives a gradient.
  const TokenStream train = stream_of(random_tokens(rng, 23, 10), 11, Split::train);

  SUBCASE("single segment gives |g|") {
    const GradStats s = collect_grad_stats(p, train, 0, 1);
    const SegmentStep step = evaluate_segment(p, train.ids().subspan(0, c.segment_len), empty_memory(c), true);
    for (std::size_t i = 0; i < s.rms.size(); ++i) {
      for (std::size_t j = 0; j < s.rms[i].size(); ++j) CHECK(s.rms[i][j] == std::abs((*step.grads)[i][j]));
    }
  }
  SUBCASE("unused parameters have zero statistic") {
    const GradStats s = collect_grad_stats(p, train, 0, 100);
    CHECK(s.segments == 5);
    const Tensor& embed = s.rms.at("embed.weight");
    for (double v : embed.row(10)) CHECK(v == 0.0);
    for (const auto& t : s.rms.tensors())
      for (double v : t.values()) CHECK(v >= 0.0);
  }
  SUBCASE("parameters are untouched and results deterministic") {
    const ModelParams copy = p;
    const GradStats s1 = collect_grad_stats(p, train, 0, 3), s2 = collect_grad_stats(p, train, 0, 3);
    CHECK(bit_equal(p.tensors, copy.tensors));
    CHECK(bit_equal(s1.rms, s2.rms));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(collect_grad_stats(p, stream_of({1, 2}, 11), 0, 1), DataError);
    CHECK_THROWS_AS(collect_grad_stats(p, train, 0, 0), ConfigError);
  }
}

TEST_CASE("static_eval: uniform model scores log2 of the vocabulary") {
  ModelParams p = init_model(tiny_config(27), 1);
  p.tensors.at("out.weight").fill(0.0);
  std::mt19937_64 rng(4);
  const TokenStream s = stream_of(random_tokens(rng, 50, 27), 27);
  const EvalReport r = static_eval(p, s);
  CHECK(r.bits_per_token() == doctest::Approx(std::log2(27.0)).epsilon(1e-12));
  CHECK(r.bits_per_token() == doctest::Approx(4.755).epsilon(1e-3));
  const EvalReport again = static_eval(p, s);
  CHECK(bit_equal(r.token_nats, again.token_nats));
}

TEST_CASE("dynamic_eval with zero learning rate equals static_eval") {
  const ModelConfig c = tiny_config(13);
  const ModelParams p = perturbed_model(c, 5);
  std::mt19937_64 rng(6);
  const TokenStream s = stream_of(random_tokens(rng, 47, 13), 13);
  const EvalReport st = static_eval(p, s);
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::rms_decay}) {
    AdaptState state(p, collect_grad_stats(p, s, 0, 2));
    const EvalReport dy = dynamic_eval(state, s, config(kind, 0.0));
    CHECK(bit_equal(st.token_nats, dy.token_nats));
    CHECK(st.total_nats == dy.total_nats);
    CHECK(dy.updates_applied == 10);
  }
}

TEST_CASE("dynamic_eval accounting") {
  const ModelConfig c = tiny_config(13);
  const ModelParams p = perturbed_model(c, 7);
  std::mt19937_64 rng(8);
  const TokenStream s = stream_of(random_tokens(rng, 23, 13), 13);
  AdaptState state(p);
  const EvalReport r = dynamic_eval(state, s, config(OptimizerKind::sgd, 0.05));
  CHECK(r.token_count == 23);
  CHECK(r.segments.size() == 5);
  CHECK(r.segments.back().tokens == 3);
  CHECK(state.updates_applied() == 5);
  CHECK(r.updates_applied == 5);
  double by_seg = 0.0, by_tok = 0.0;
  for (const auto& seg : r.segments) by_seg += seg.nats;
  for (double v : r.token_nats) by_tok += v;
  CHECK(std::abs(by_seg - r.total_nats) <= 1e-9);
  CHECK(std::abs(by_tok - r.total_nats) <= 1e-9);
  CHECK(bit_equal(state.trained().tensors, p.tensors));

  SUBCASE("short stream: one partial segment, one update") {
    AdaptState st(p);
    const EvalReport short_r = dynamic_eval(st, stream_of({1, 2, 3}, 13), config(OptimizerKind::sgd, 0.05));
    CHECK(short_r.segments.size() == 1);
    CHECK(st.updates_applied() == 1);
  }
  SUBCASE("rms without statistics") {
    AdaptState st(p);
    CHECK_THROWS_AS(dynamic_eval(st, s, config(OptimizerKind::rms_decay, 0.01)), AdaptationError);
  }
  SUBCASE("invalid config") {
    AdaptState st(p);
    CHECK_THROWS_AS(dynamic_eval(st, s, config(OptimizerKind::sgd, -1.0)), ConfigError);
    CHECK_THROWS_AS(dynamic_eval(st, stream_of({}, 13), config(OptimizerKind::sgd, 0.1)), DataError);
  }
  SUBCASE("divergence reports the segment") {
    AdaptState st(p);
    try {
      dynamic_eval(st, s, config(OptimizerKind::sgd, 1e300));
      FAIL("expected divergence");
    } catch (const DivergenceError& e) {
      CHECK(e.index() >= 1);
    } catch (const AdaptationError&) {
      // A non-finite gradient can surface before a non-finite loss.
    } catch (const NumericDomainError&) {
    }
  }
}

TEST_CASE("dynamic_eval: predict-then-adapt hand trace") {
  // d_model = 2, one layer, vocab 3. Segment 1 is scored with the trained
  // weights; the oracle then takes a finite-difference gradient of segment
  // 1's mean loss, applies the SGD step by hand and scores segment 2 with
  // the memory computed before the update.
  ModelConfig c;
  c.vocab_size = 3;
  c.n_layers = 1;
  c.d_model = 2;
  c.n_heads = 1;
  c.d_head = 2;
  c.d_ff = 3;
  c.segment_len = 3;
  c.mem_len = 3;
  const ModelParams p = perturbed_model(c, 9, 0.7);
  const std::vector<TokenId> ids{2, 0, 1, 1, 2, 0};
  const auto seg1 = std::span(ids).subspan(0, 3), seg2 = std::span(ids).subspan(3);
  const double eta = 0.3;

  AdaptState state(p);
  const EvalReport r = dynamic_eval(state, stream_of(ids, 3), config(OptimizerKind::sgd, eta));

  const SegmentStep first = evaluate_segment(p, seg1, empty_memory(c), false);
  for (std::size_t i = 0; i < 3; ++i) CHECK(r.token_nats[i] == first.token_nats[i]);

  ModelParams updated = p;
  ModelParams work = p;
  const double h = 1e-6;
  for (std::size_t t = 0; t < p.tensors.size(); ++t) {
    for (std::size_t i = 0; i < p.tensors[t].size(); ++i) {
      double& w = work.tensors[t][i];
      const double saved = w;
      w = saved + h;
      const double up = dynxl::test::segment_loss(work, seg1, empty_memory(c));
      w = saved - h;
      const double down = dynxl::test::segment_loss(work, seg1, empty_memory(c));
      w = saved;
      updated.tensors[t][i] -= eta * (up - down) / (2 * h);
    }
  }
  const SegmentStep second = evaluate_segment(updated, seg2, first.memory, false);
  const SegmentStep stale = evaluate_segment(p, seg2, first.memory, false);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.token_nats[3 + i] == doctest::Approx(second.token_nats[i]).epsilon(1e-8));
    CHECK(std::abs(r.token_nats[3 + i] - stale.token_nats[i]) > 1e-6);
  }
}

TEST_CASE("dynamic_eval: truncation leaves earlier losses unchanged") {
  const ModelConfig c = tiny_config(13);
  const ModelParams p = perturbed_model(c, 10);
  std::mt19937_64 rng(11);
  const auto ids = random_tokens(rng, 40, 13);
  AdaptState full_state(p, collect_grad_stats(p, stream_of(ids, 13), 0, 3));
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::rms_decay}) {
    full_state.reset();
    const EvalReport full = dynamic_eval(full_state, stream_of(ids, 13), config(kind, 0.05, 0.01));
    for (std::size_t cut : {1u, 4u, 5u, 6u, 17u, 39u}) {
      AdaptState st(p, full_state.stats());
      const EvalReport part =
          dynamic_eval(st, stream_of(std::vector<TokenId>(ids.begin(), ids.begin() + cut), 13), config(kind, 0.05, 0.01));
      CHECK(bit_equal(part.token_nats, std::span(full.token_nats).subspan(0, cut)));
    }
  }
}

TEST_CASE("dynamic_eval: gradients depend only on the injected memory") {
  const ModelConfig c = tiny_config(13);
  const ModelParams p = perturbed_model(c, 12);
  std::mt19937_64 rng(13);
  const auto ids = random_tokens(rng, 15, 13);
  SegmentMemory memory = empty_memory(c);
  for (std::size_t s = 0; s < 2; ++s) memory = evaluate_segment(p, std::span(ids).subspan(5 * s, 5), memory, false).memory;
  // Same memory handed to a fresh evaluation of segment 3.
  const SegmentStep a = evaluate_segment(p, std::span(ids).subspan(10, 5), memory, true);
  const SegmentStep b = evaluate_segment(p, std::span(ids).subspan(10, 5), SegmentMemory(memory), true);
  CHECK(bit_equal(*a.grads, *b.grads));
}

TEST_CASE("DynevalConfig validation and fingerprint") {
  DynevalConfig c = config(OptimizerKind::rms_decay, 0.1, 1.5);
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.decay_rate = 0.0;
  CHECK_NOTHROW(c.validate());
  c.epsilon = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  DynevalConfig s = config(OptimizerKind::sgd, 0.0);
  s.decay_rate = 5.0;  // ignored by sgd
  CHECK_NOTHROW(s.validate());
  CHECK(s.fingerprint().find("mode=sgd") == 0);
  CHECK(optimizer_kind_from_string("rms") == OptimizerKind::rms_decay);
  CHECK_THROWS_AS(optimizer_kind_from_string("adam"), ConfigError);
}
