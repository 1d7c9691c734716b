// evmscan: sequence-model vulnerability scanning for EVM bytecode
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "evmscan/model.hpp"
#include "evmscan/util.hpp"
#include "fd_check.hpp"

using namespace evmscan;

namespace {

TransformerConfig tiny_transformer_cfg() {
  TransformerConfig cfg;
  cfg.max_length = 16;
  cfg.embedding_dim = 8;
  cfg.num_heads = 2;
  cfg.head_size = 8;
  cfg.ff_dim = 16;
  cfg.dropout_rate = 0.0;
  cfg.num_classes = 2;
  cfg.vocab_size = 16;
  return cfg;
}

Tensor random_tensor(std::vector<size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.next_range(-1.0, 1.0);
  return t;
}

// Independent attention oracle: per-head loops, own softmax.
Tensor naive_attention(const Tensor& x, const ModelParams& p,
                       const TransformerConfig& cfg,
                       const std::vector<uint8_t>& mask) {
  size_t L = x.shape()[0], d = cfg.embedding_dim, hs = cfg.head_size;
  size_t nh = cfg.num_heads, dh = hs / nh;
  auto project = [&](const Tensor& w) {
    Tensor out({L, hs});
    for (size_t i = 0; i < L; ++i)
      for (size_t j = 0; j < hs; ++j) {
        double acc = 0.0;
        for (size_t k = 0; k < d; ++k) acc += x[i * d + k] * w[k * hs + j];
        out[i * hs + j] = acc;
      }
    return out;
  };
  Tensor q = project(p.at("attn.wq"));
  Tensor k = project(p.at("attn.wk"));
  Tensor v = project(p.at("attn.wv"));
  Tensor ctx({L, hs});
  for (size_t h = 0; h < nh; ++h) {
    for (size_t i = 0; i < L; ++i) {
      std::vector<double> scores(L);
      for (size_t j = 0; j < L; ++j) {
        double acc = 0.0;
        for (size_t e = 0; e < dh; ++e)
          acc += q[i * hs + h * dh + e] * k[j * hs + h * dh + e];
        scores[j] = acc / std::sqrt(static_cast<double>(dh)) +
                    (mask[j] ? 0.0 : -1e9);
      }
      double mx = scores[0];
      for (double s : scores) mx = std::max(mx, s);
      double denom = 0.0;
      for (double& s : scores) {
        s = std::exp(s - mx);
        denom += s;
      }
      for (double& s : scores) s /= denom;
      for (size_t e = 0; e < dh; ++e) {
        double acc = 0.0;
        for (size_t j = 0; j < L; ++j) acc += scores[j] * v[j * hs + h * dh + e];
        ctx[i * hs + h * dh + e] = acc;
      }
    }
  }
  const Tensor& wo = p.at("attn.wo");
  Tensor out({L, d});
  for (size_t i = 0; i < L; ++i)
    for (size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (size_t e = 0; e < hs; ++e) acc += ctx[i * hs + e] * wo[e * d + j];
      out[i * d + j] = acc;
    }
  return out;
}

}  // namespace

TEST_CASE("positional encoding row zero alternates sin(0)=0 and cos(0)=1") {
  Tensor pe = positional_encoding(4, 6);
  for (size_t j = 0; j < 6; ++j)
    CHECK(pe[j] == (j % 2 == 0 ? 0.0 : 1.0));
}

TEST_CASE("positional encoding matches the sinusoid formula") {
  Tensor pe = positional_encoding(3, 4);
  CHECK(pe[1 * 4 + 0] == doctest::Approx(0.8414709848).epsilon(1e-10));
  CHECK(pe[1 * 4 + 1] == doctest::Approx(std::cos(1.0)).epsilon(1e-12));
  double freq = std::pow(10000.0, -2.0 / 4.0);
  CHECK(pe[2 * 4 + 2] == doctest::Approx(std::sin(2.0 * freq)).epsilon(1e-12));
}

TEST_CASE("positional encoding shape at the full-size defaults") {
  Tensor pe = positional_encoding(2048, 128);
  CHECK(pe.shape() == std::vector<size_t>{2048, 128});
  CHECK_THROWS_AS(positional_encoding(8, 7), ShapeError);
}

TEST_CASE("attention over a single unmasked token is the identity weight") {
  TransformerConfig cfg = tiny_transformer_cfg();
  ModelParams params = init_transformer_params(cfg, 1);
  Rng rng(2);
  Tape t;
  ParamLeaves leaves = push_param_leaves(t, params);
  NodeId x = t.constant(random_tensor({1, cfg.embedding_dim}, rng));
  std::vector<NodeId> attn;
  self_attention(t, x, params, leaves, cfg, {1}, &attn);
  REQUIRE(attn.size() == cfg.num_heads);
  for (NodeId a : attn) {
    CHECK(t.value(a).shape() == std::vector<size_t>{1, 1});
    CHECK(t.value(a)[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("identical rows attend uniformly") {
  TransformerConfig cfg = tiny_transformer_cfg();
  ModelParams params = init_transformer_params(cfg, 3);
  Rng rng(4);
  size_t L = 5;
  Tensor row = random_tensor({1, cfg.embedding_dim}, rng);
  Tensor x({L, cfg.embedding_dim});
  for (size_t i = 0; i < L; ++i)
    for (size_t j = 0; j < cfg.embedding_dim; ++j)
      x[i * cfg.embedding_dim + j] = row[j];
  Tape t;
  ParamLeaves leaves = push_param_leaves(t, params);
  std::vector<NodeId> attn;
  self_attention(t, t.constant(x), params, leaves, cfg,
                 std::vector<uint8_t>(L, 1), &attn);
  for (NodeId a : attn) {
    const Tensor& w = t.value(a);
    for (size_t i = 0; i < L * L; ++i)
      CHECK(w[i] == doctest::Approx(1.0 / double(L)).epsilon(1e-12));
  }
}

TEST_CASE("attention output matches the per-head brute-force oracle") {
  TransformerConfig cfg = tiny_transformer_cfg();
  cfg.num_heads = 2;
  ModelParams params = init_transformer_params(cfg, 5);
  Rng rng(6);
  size_t L = 6;
  Tensor x = random_tensor({L, cfg.embedding_dim}, rng);
  std::vector<uint8_t> mask = {1, 1, 1, 1, 1, 0};
  Tape t;
  ParamLeaves leaves = push_param_leaves(t, params);
  NodeId out = self_attention(t, t.constant(x), params, leaves, cfg, mask);
  Tensor want = naive_attention(x, params, cfg, mask);
  const Tensor& got = t.value(out);
  REQUIRE(got.size() == want.size());
  for (size_t i = 0; i < got.size(); ++i)
    CHECK(std::fabs(got[i] - want[i]) <= 1e-10);
}

TEST_CASE("attention rejects a mask of the wrong length") {
  TransformerConfig cfg = tiny_transformer_cfg();
  ModelParams params = init_transformer_params(cfg, 1);
  Tape t;
  ParamLeaves leaves = push_param_leaves(t, params);
  NodeId x = t.constant(Tensor({3, cfg.embedding_dim}));
  CHECK_THROWS_AS(self_attention(t, x, params, leaves, cfg, {1, 1}),
                  ShapeError);
}

TEST_CASE("encoder block preserves shape and is deterministic at inference") {
  TransformerConfig cfg = tiny_transformer_cfg();
  ModelParams params = init_transformer_params(cfg, 7);
  Rng rng(8);
  size_t L = 4;
  Tensor x = random_tensor({L, cfg.embedding_dim}, rng);
  std::vector<uint8_t> mask(L, 1);
  auto run = [&]() {
    Tape t;
    ParamLeaves leaves = push_param_leaves(t, params);
    NodeId out =
        encoder_block(t, t.constant(x), params, leaves, cfg, mask, false);
    return t.value(out);
  };
  Tensor a = run();
  Tensor b = run();
  CHECK(a.shape() == std::vector<size_t>{L, cfg.embedding_dim});
  CHECK(a.values() == b.values());
}

TEST_CASE("encoder block gradients match finite differences") {
  TransformerConfig cfg = tiny_transformer_cfg();
  ModelParams params = init_transformer_params(cfg, 9);
  Rng rng(10);
  size_t L = 5;
  Tensor x = random_tensor({L, cfg.embedding_dim}, rng);
  std::vector<uint8_t> mask(L, 1);
  Rng wrng(11);
  Tensor weights = random_tensor({L, cfg.embedding_dim}, wrng);
  auto loss_fn = [&]() {
    Tape t;
    ParamLeaves leaves = push_param_leaves(t, params);
    NodeId out =
        encoder_block(t, t.constant(x), params, leaves, cfg, mask, false);
    return t.value(t.reduce_sum(t.mul(out, t.constant(weights))))[0];
  };
  Tape t;
  ParamLeaves leaves = push_param_leaves(t, params);
  NodeId out = encoder_block(t, t.constant(x), params, leaves, cfg, mask, false);
  t.backward(t.reduce_sum(t.mul(out, t.constant(weights))));
  for (size_t i = 0; i < params.named.size(); ++i) {
    const std::string& name = params.named[i].first;
    if (name == "embedding" || name.rfind("pool.", 0) == 0 ||
        name.rfind("dense.", 0) == 0 || name.rfind("out.", 0) == 0)
      continue;  // not part of the encoder block
    Tensor analytic = t.grad(leaves.order[i]);
    fd::Report rep =
        fd::check_gradient(params.named[i].second, analytic, loss_fn);
    INFO("parameter ", name);
    CHECK(rep.max_rel <= 1e-6);
  }
}

TEST_CASE("pooling of identical rows returns that row") {
  TransformerConfig cfg = tiny_transformer_cfg();
  ModelParams params = init_transformer_params(cfg, 12);
  Rng rng(13);
  size_t L = 6, d = cfg.embedding_dim;
  Tensor row = random_tensor({1, d}, rng);
  Tensor x({L, d});
  for (size_t i = 0; i < L; ++i)
    for (size_t j = 0; j < d; ++j) x[i * d + j] = row[j];
  Tape t;
  ParamLeaves leaves = push_param_leaves(t, params);
  NodeId pooled = attention_pooling(t, t.constant(x), params, leaves,
                                    std::vector<uint8_t>(L, 1));
  for (size_t j = 0; j < d; ++j)
    CHECK(t.value(pooled)[j] == doctest::Approx(row[j]).epsilon(1e-12));
}

TEST_CASE("pooling gives masked positions exactly zero weight") {
  TransformerConfig cfg = tiny_transformer_cfg();
  ModelParams params = init_transformer_params(cfg, 14);
  Rng rng(15);
  size_t L = 5;
  Tensor x = random_tensor({L, cfg.embedding_dim}, rng);
  std::vector<uint8_t> mask = {1, 1, 1, 0, 0};
  Tape t;
  ParamLeaves leaves = push_param_leaves(t, params);
  NodeId weights = -1;
  attention_pooling(t, t.constant(x), params, leaves, mask, &weights);
  const Tensor& w = t.value(weights);
  CHECK(w[3] == 0.0);
  CHECK(w[4] == 0.0);
  double sum = 0.0;
  for (size_t i = 0; i < L; ++i) sum += w[i];
  CHECK(std::fabs(sum - 1.0) <= 1e-9);
}

TEST_CASE("pooling matches the explicit weighted-sum oracle") {
  TransformerConfig cfg = tiny_transformer_cfg();
  ModelParams params = init_transformer_params(cfg, 16);
  Rng rng(17);
  size_t L = 7, d = cfg.embedding_dim;
  Tensor x = random_tensor({L, d}, rng);
  std::vector<uint8_t> mask(L, 1);
  mask[2] = 0;
  Tape t;
  ParamLeaves leaves = push_param_leaves(t, params);
  NodeId pooled = attention_pooling(t, t.constant(x), params, leaves, mask);

  // Oracle: score_i = u . tanh(W x_i), softmax over unmasked, weighted sum.
  const Tensor& w = params.at("pool.w");
  const Tensor& u = params.at("pool.u");
  std::vector<double> scores(L, -1e300);
  for (size_t i = 0; i < L; ++i) {
    if (!mask[i]) continue;
    double s = 0.0;
    for (size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (size_t k = 0; k < d; ++k) acc += x[i * d + k] * w[k * d + j];
      s += u[j] * std::tanh(acc);
    }
    scores[i] = s;
  }
  double mx = -1e300;
  for (size_t i = 0; i < L; ++i)
    if (mask[i]) mx = std::max(mx, scores[i]);
  double denom = 0.0;
  std::vector<double> wt(L, 0.0);
  for (size_t i = 0; i < L; ++i) {
    if (!mask[i]) continue;
    wt[i] = std::exp(scores[i] - mx);
    denom += wt[i];
  }
  for (size_t i = 0; i < L; ++i) wt[i] /= denom;
  for (size_t j = 0; j < d; ++j) {
    double want = 0.0;
    for (size_t i = 0; i < L; ++i) want += wt[i] * x[i * d + j];
    CHECK(std::fabs(t.value(pooled)[j] - want) <= 1e-12);
  }
}

TEST_CASE("pooling over a fully masked window reports EmptyWindow") {
  TransformerConfig cfg = tiny_transformer_cfg();
  ModelParams params = init_transformer_params(cfg, 18);
  Tape t;
  ParamLeaves leaves = push_param_leaves(t, params);
  NodeId x = t.constant(Tensor({3, cfg.embedding_dim}));
  CHECK_THROWS_AS(attention_pooling(t, x, params, leaves, {0, 0, 0}),
                  EmptyWindow);
}

TEST_CASE("forward emits a probability vector summing to one") {
  TransformerConfig cfg = tiny_transformer_cfg();
  ModelParams params = init_transformer_params(cfg, 19);
  ForwardResult r = transformer_forward(params, cfg, {2, 3, 4, 5, 0, 0});
  REQUIRE(r.probs.size() == cfg.num_classes);
  double sum = 0.0;
  for (double p : r.probs) {
    CHECK(p >= 0.0);
    sum += p;
  }
  CHECK(std::fabs(sum - 1.0) <= 1e-9);
}

TEST_CASE("parameter counts reproduce the documented layout at defaults") {
  TransformerConfig cfg;  // defaults: d=128, heads=4, head_size=128, C=2
  cfg.vocab_size = 1000;
  ModelParams params = init_transformer_params(cfg, 0);
  TransformerCountReport r = transformer_count_report(params);
  CHECK(r.embedding == 128000);
  CHECK(r.attention_projections == 65536);
  CHECK(r.pooling_projection == 16384);
  CHECK(r.output_linear == 258);

  // Per-tensor report totals agree.
  size_t total = 0;
  for (const LayerCount& lc : param_count(params))
    if (lc.name != "total") total += lc.count;
  CHECK(total == r.total);
}

TEST_CASE("inference is deterministic") {
  TransformerConfig cfg = tiny_transformer_cfg();
  ModelParams params = init_transformer_params(cfg, 20);
  std::vector<int32_t> ids = {2, 7, 7, 3};
  ForwardResult a = transformer_forward(params, cfg, ids);
  ForwardResult b = transformer_forward(params, cfg, ids);
  CHECK(a.probs == b.probs);
}

TEST_CASE("appending padding does not change inference probabilities") {
  TransformerConfig cfg = tiny_transformer_cfg();
  ModelParams params = init_transformer_params(cfg, 21);
  std::vector<int32_t> ids = {2, 9, 4, 3, 11};
  std::vector<int32_t> padded = ids;
  padded.insert(padded.end(), 6, kPadId);
  ForwardResult a = transformer_forward(params, cfg, ids);
  ForwardResult b = transformer_forward(params, cfg, padded);
  for (size_t i = 0; i < a.probs.size(); ++i)
    CHECK(std::fabs(a.probs[i] - b.probs[i]) <= 1e-9);
}

TEST_CASE("permuting vocabulary ids together with embedding rows is a no-op") {
  TransformerConfig cfg = tiny_transformer_cfg();
  ModelParams params = init_transformer_params(cfg, 22);
  size_t v = cfg.vocab_size, d = cfg.embedding_dim;

  // Permute non-reserved ids; PAD and OOV stay put.
  std::vector<int32_t> perm(v);
  for (size_t i = 0; i < v; ++i) perm[i] = static_cast<int32_t>(i);
  Rng rng(23);
  for (size_t i = v - 1; i > 2; --i) {
    size_t j = 2 + rng.next_below(i - 1);
    std::swap(perm[i], perm[j]);
  }
  ModelParams permuted = params;
  Tensor& table = permuted.at("embedding");
  const Tensor& orig = params.at("embedding");
  for (size_t i = 0; i < v; ++i)
    for (size_t j = 0; j < d; ++j)
      table[static_cast<size_t>(perm[i]) * d + j] = orig[i * d + j];

  std::vector<int32_t> ids = {2, 5, 9, 14, 3};
  std::vector<int32_t> mapped;
  for (int32_t id : ids) mapped.push_back(perm[static_cast<size_t>(id)]);
  ForwardResult a = transformer_forward(params, cfg, ids);
  ForwardResult b = transformer_forward(permuted, cfg, mapped);
  CHECK(a.probs == b.probs);
}

TEST_CASE("forward rejects out-of-vocabulary ids") {
  TransformerConfig cfg = tiny_transformer_cfg();
  ModelParams params = init_transformer_params(cfg, 24);
  CHECK_THROWS_AS(
      transformer_forward(params, cfg, {2, static_cast<int32_t>(cfg.vocab_size)}),
      UnknownId);
}

TEST_CASE("full transformer gradients match finite differences, 3 seeds") {
  for (uint64_t seed : {101ull, 202ull, 303ull}) {
    TransformerConfig cfg = tiny_transformer_cfg();
    ModelParams params = init_transformer_params(cfg, seed);
    Rng rng(seed + 1);
    std::vector<int32_t> ids;
    for (int i = 0; i < 6; ++i)
      ids.push_back(2 + static_cast<int32_t>(rng.next_below(cfg.vocab_size - 2)));
    size_t target = seed % 2;
    auto loss_fn = [&]() {
      Tape t;
      ModelGraph g = build_transformer(t, params, cfg, ids, false);
      return t.value(t.ce_loss(g.probs, target))[0];
    };
    Tape t;
    ModelGraph g = build_transformer(t, params, cfg, ids, false);
    t.backward(t.ce_loss(g.probs, target));
    for (size_t i = 0; i < params.named.size(); ++i) {
      Tensor analytic = t.grad(g.leaves.order[i]);
      fd::Report rep =
          fd::check_gradient(params.named[i].second, analytic, loss_fn);
      INFO("seed ", seed, " parameter ", params.named[i].first);
      CHECK(rep.max_rel <= 1e-6);
    }
  }
}

TEST_CASE("transformer gradients stay correct with a padded tail") {
  TransformerConfig cfg = tiny_transformer_cfg();
  ModelParams params = init_transformer_params(cfg, 404);
  std::vector<int32_t> ids = {2, 9, 4, 0, 0};
  auto loss_fn = [&]() {
    Tape t;
    ModelGraph g = build_transformer(t, params, cfg, ids, false);
    return t.value(t.ce_loss(g.probs, 1))[0];
  };
  Tape t;
  ModelGraph g = build_transformer(t, params, cfg, ids, false);
  t.backward(t.ce_loss(g.probs, 1));
  for (size_t i = 0; i < params.named.size(); ++i) {
    Tensor analytic = t.grad(g.leaves.order[i]);
    fd::Report rep =
        fd::check_gradient(params.named[i].second, analytic, loss_fn);
    INFO("parameter ", params.named[i].first);
    CHECK(rep.max_rel <= 1e-6);
  }
}

TEST_CASE("all-zero LSTM parameters pin every hidden state at zero") {
  LstmConfig cfg;
  cfg.max_length = 8;
  cfg.embedding_dim = 4;
  cfg.hidden_size = 6;
  cfg.dropout_rate = 0.0;
  cfg.vocab_size = 8;
  ModelParams params = init_lstm_params(cfg, 25);
  for (auto& [name, t] : params.named)
    for (size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
  // tanh(0) = 0 forces c = h = 0, so the logits are the (zero) output bias
  // and the probabilities are uniform regardless of the input.
  std::vector<double> a = lstm_forward(params, cfg, {2, 3, 4});
  std::vector<double> b = lstm_forward(params, cfg, {5, 6, 7, 2});
  CHECK(a == b);
  for (double p : a) CHECK(p == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("LSTM output is a probability vector and ignores the padded tail") {
  LstmConfig cfg;
  cfg.max_length = 10;
  cfg.embedding_dim = 5;
  cfg.hidden_size = 7;
  cfg.dropout_rate = 0.0;
  cfg.num_classes = 4;
  cfg.vocab_size = 12;
  ModelParams params = init_lstm_params(cfg, 26);
  std::vector<int32_t> ids = {2, 3, 4, 5};
  std::vector<int32_t> padded = {2, 3, 4, 5, 0, 0, 0};
  std::vector<double> a = lstm_forward(params, cfg, ids);
  std::vector<double> b = lstm_forward(params, cfg, padded);
  REQUIRE(a.size() == 4);
  double sum = 0.0;
  for (double p : a) sum += p;
  CHECK(std::fabs(sum - 1.0) <= 1e-9);
  CHECK(a == b);
}

TEST_CASE("full LSTM gradients match finite differences, 3 seeds") {
  for (uint64_t seed : {111ull, 222ull, 333ull}) {
    LstmConfig cfg;
    cfg.max_length = 8;
    cfg.embedding_dim = 8;
    cfg.hidden_size = 12;
    cfg.dropout_rate = 0.0;
    cfg.vocab_size = 16;
    ModelParams params = init_lstm_params(cfg, seed);
    Rng rng(seed + 1);
    std::vector<int32_t> ids;
    for (int i = 0; i < 5; ++i)
      ids.push_back(2 + static_cast<int32_t>(rng.next_below(cfg.vocab_size - 2)));
    auto loss_fn = [&]() {
      Tape t;
      ModelGraph g = build_lstm(t, params, cfg, ids, false);
      return t.value(t.ce_loss(g.probs, 1))[0];
    };
    Tape t;
    ModelGraph g = build_lstm(t, params, cfg, ids, false);
    t.backward(t.ce_loss(g.probs, 1));
    for (size_t i = 0; i < params.named.size(); ++i) {
      Tensor analytic = t.grad(g.leaves.order[i]);
      fd::Report rep =
          fd::check_gradient(params.named[i].second, analytic, loss_fn);
      INFO("seed ", seed, " parameter ", params.named[i].first);
      CHECK(rep.max_rel <= 1e-6);
    }
  }
}

TEST_CASE("gradient sets mirror the parameter layout exactly") {
  TransformerConfig cfg = tiny_transformer_cfg();
  ModelParams params = init_transformer_params(cfg, 31);
  Tape t;
  ModelGraph g = build_transformer(t, params, cfg, {2, 3, 4}, false);
  t.backward(t.ce_loss(g.probs, 0));
  GradientSet grads = gradient_set(t, params, g.leaves);
  REQUIRE(grads.size() == params.named.size());
  for (size_t i = 0; i < grads.size(); ++i) {
    CHECK(grads[i].first == params.named[i].first);
    CHECK(grads[i].second.shape() == params.named[i].second.shape());
  }
}

TEST_CASE("attention rows and pooling weights stay normalized under masks") {
  TransformerConfig cfg = tiny_transformer_cfg();
  ModelParams params = init_transformer_params(cfg, 27);
  Rng rng(28);
  for (int trial = 0; trial < 25; ++trial) {
    size_t real = 1 + rng.next_below(10);
    size_t pad = rng.next_below(5);
    std::vector<int32_t> ids;
    for (size_t i = 0; i < real; ++i)
      ids.push_back(2 + static_cast<int32_t>(rng.next_below(cfg.vocab_size - 2)));
    ids.insert(ids.end(), pad, kPadId);
    ForwardResult r = transformer_forward(params, cfg, ids);
    size_t L = ids.size();
    for (const Tensor& head : r.trace.head_weights) {
      for (size_t i = 0; i < L; ++i) {
        double sum = 0.0;
        for (size_t j = 0; j < L; ++j) {
          double w = head[i * L + j];
          if (j >= real) CHECK(w <= 1e-12);
          sum += w;
        }
        CHECK(std::fabs(sum - 1.0) <= 1e-9);
      }
    }
    double pool_sum = 0.0;
    for (size_t i = 0; i < L; ++i) {
      double w = r.trace.pool_weights[i];
      if (i >= real) CHECK(w <= 1e-12);
      pool_sum += w;
    }
    CHECK(std::fabs(pool_sum - 1.0) <= 1e-9);
  }
}
