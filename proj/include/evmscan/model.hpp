// evmscan: sequence-model vulnerability scanning for EVM bytecode
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "evmscan/autodiff.hpp"
#include "evmscan/tensor.hpp"
#include "evmscan/util.hpp"
#include "evmscan/vocab.hpp"

namespace evmscan {

enum class ModelKind { kTransformer = 0, kLstm = 1 };

inline const char* model_kind_name(ModelKind k) {
  return k == ModelKind::kTransformer ? "transformer" : "lstm";
}

// Additive penalty applied to masked positions before softmax. Large enough
// that exp() underflows to exactly zero after max-subtraction.
constexpr double kMaskPenalty = -1e9;

struct TransformerConfig {
  size_t max_length = 2048;
  size_t embedding_dim = 128;
  size_t num_heads = 4;
  size_t head_size = 128;  // total width across heads
  size_t ff_dim = 4 * 128;
  double dropout_rate = 0.2;
  size_t num_classes = 2;
  size_t vocab_size = 1000;

  size_t per_head() const { return head_size / num_heads; }

  void validate() const {
    if (num_heads == 0 || head_size % num_heads != 0)
      throw ShapeError("head_size must be divisible by num_heads");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw Error("dropout_rate must be in [0, 1)");
    if (num_classes != 2 && num_classes != 4)
      throw Error("num_classes must be 2 or 4");
    if (embedding_dim % 2 != 0)
      throw ShapeError("embedding_dim must be even for sinusoidal encodings");
  }
};

struct LstmConfig {
  size_t max_length = 2048;
  size_t embedding_dim = 128;
  size_t hidden_size = 256;
  double dropout_rate = 0.2;
  size_t num_classes = 2;
  size_t vocab_size = 1000;

  void validate() const {
    if (hidden_size == 0) throw ShapeError("hidden_size must be positive");
    if (num_classes != 2 && num_classes != 4)
      throw Error("num_classes must be 2 or 4");
  }
};

// Named tensors in a fixed order; iteration order is part of the contract so
// optimizer state and checkpoints are reproducible.
struct ModelParams {
  std::vector<std::pair<std::string, Tensor>> named;

  Tensor& at(const std::string& name) {
    for (auto& [n, t] : named)
      if (n == name) return t;
    throw Error("no parameter named " + name);
  }
  const Tensor& at(const std::string& name) const {
    for (const auto& [n, t] : named)
      if (n == name) return t;
    throw Error("no parameter named " + name);
  }

  size_t total_count() const {
    size_t n = 0;
    for (const auto& [name, t] : named) n += t.size();
    return n;
  }

  bool same_layout(const ModelParams& other) const {
    if (named.size() != other.named.size()) return false;
    for (size_t i = 0; i < named.size(); ++i)
      if (named[i].first != other.named[i].first ||
          named[i].second.shape() != other.named[i].second.shape())
        return false;
    return true;
  }
};

struct LayerCount {
  std::string name;
  size_t count;
};

inline std::vector<LayerCount> param_count(const ModelParams& params) {
  std::vector<LayerCount> out;
  size_t total = 0;
  for (const auto& [name, t] : params.named) {
    out.push_back({name, t.size()});
    total += t.size();
  }
  out.push_back({"total", total});
  return out;
}

// The four headline groups of the transformer layout plus the grand total.
struct TransformerCountReport {
  size_t embedding = 0;
  size_t attention_projections = 0;
  size_t pooling_projection = 0;
  size_t output_linear = 0;
  size_t total = 0;
};

inline TransformerCountReport transformer_count_report(
    const ModelParams& params) {
  TransformerCountReport r;
  for (const auto& [name, t] : params.named) {
    r.total += t.size();
    if (name == "embedding") r.embedding += t.size();
    if (name == "attn.wq" || name == "attn.wk" || name == "attn.wv" ||
        name == "attn.wo")
      r.attention_projections += t.size();
    if (name == "pool.w") r.pooling_projection += t.size();
    if (name == "out.w" || name == "out.b") r.output_linear += t.size();
  }
  return r;
}

namespace detail {

inline Tensor glorot(std::vector<size_t> shape, Rng& rng) {
  size_t fan_in = shape.size() == 2 ? shape[0] : 1;
  size_t fan_out = shape.size() == 2 ? shape[1] : shape[0];
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.next_range(-limit, limit);
  return t;
}

inline Tensor ones(size_t n) {
  Tensor t({n});
  for (size_t i = 0; i < n; ++i) t[i] = 1.0;
  return t;
}

}  // namespace detail

inline ModelParams init_transformer_params(const TransformerConfig& cfg,
                                           uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  size_t d = cfg.embedding_dim, hs = cfg.head_size, ff = cfg.ff_dim,
         c = cfg.num_classes, v = cfg.vocab_size;
  ModelParams p;
  p.named.emplace_back("embedding", detail::glorot({v, d}, rng));
  p.named.emplace_back("attn.wq", detail::glorot({d, hs}, rng));
  p.named.emplace_back("attn.wk", detail::glorot({d, hs}, rng));
  p.named.emplace_back("attn.wv", detail::glorot({d, hs}, rng));
  p.named.emplace_back("attn.wo", detail::glorot({hs, d}, rng));
  p.named.emplace_back("ln1.gain", detail::ones(d));
  p.named.emplace_back("ln1.shift", Tensor({d}));
  p.named.emplace_back("ffn.w1", detail::glorot({d, ff}, rng));
  p.named.emplace_back("ffn.b1", Tensor({ff}));
  p.named.emplace_back("ffn.w2", detail::glorot({ff, d}, rng));
  p.named.emplace_back("ffn.b2", Tensor({d}));
  p.named.emplace_back("ln2.gain", detail::ones(d));
  p.named.emplace_back("ln2.shift", Tensor({d}));
  p.named.emplace_back("pool.w", detail::glorot({d, d}, rng));
  p.named.emplace_back("pool.u", detail::glorot({1, d}, rng));
  p.named.emplace_back("dense.w", detail::glorot({d, d}, rng));
  p.named.emplace_back("dense.b", Tensor({d}));
  p.named.emplace_back("out.w", detail::glorot({d, c}, rng));
  p.named.emplace_back("out.b", Tensor({c}));
  return p;
}

inline ModelParams init_lstm_params(const LstmConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  size_t d = cfg.embedding_dim, h = cfg.hidden_size, c = cfg.num_classes,
         v = cfg.vocab_size;
  ModelParams p;
  p.named.emplace_back("embedding", detail::glorot({v, d}, rng));
  p.named.emplace_back("lstm.wx", detail::glorot({d, 4 * h}, rng));
  p.named.emplace_back("lstm.wh", detail::glorot({h, 4 * h}, rng));
  p.named.emplace_back("lstm.b", Tensor({4 * h}));
  p.named.emplace_back("dense.w", detail::glorot({h, h}, rng));
  p.named.emplace_back("dense.b", Tensor({h}));
  p.named.emplace_back("out.w", detail::glorot({h, c}, rng));
  p.named.emplace_back("out.b", Tensor({c}));
  return p;
}

// Fixed sinusoidal positional encoding:
//   PE(pos, 2i)   = sin(pos / 10000^(2i/d))
//   PE(pos, 2i+1) = cos(pos / 10000^(2i/d))
inline Tensor positional_encoding(size_t length, size_t d) {
  if (d % 2 != 0)
    throw ShapeError("positional encoding dimension must be even, got " +
                     std::to_string(d));
  Tensor pe({length, d});
  for (size_t i = 0; i < d / 2; ++i) {
    double freq = std::pow(
        10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
    for (size_t pos = 0; pos < length; ++pos) {
      double angle = static_cast<double>(pos) * freq;
      pe[pos * d + 2 * i] = std::sin(angle);
      pe[pos * d + 2 * i + 1] = std::cos(angle);
    }
  }
  return pe;
}

// Handles to the parameter leaves of one forward pass.
struct ParamLeaves {
  std::vector<NodeId> order;  // parallel to ModelParams::named
  NodeId of(const ModelParams& p, const std::string& name) const {
    for (size_t i = 0; i < p.named.size(); ++i)
      if (p.named[i].first == name) return order[i];
    throw Error("no parameter named " + name);
  }
};

inline ParamLeaves push_param_leaves(Tape& tape, const ModelParams& params) {
  ParamLeaves leaves;
  leaves.order.reserve(params.named.size());
  for (const auto& [name, t] : params.named)
    leaves.order.push_back(tape.leaf(t, /*requires_grad=*/true));
  return leaves;
}

inline std::vector<uint8_t> pad_mask_of(const std::vector<int32_t>& ids) {
  std::vector<uint8_t> mask(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) mask[i] = ids[i] != kPadId;
  return mask;
}

namespace detail {

inline Tensor penalty_vector(const std::vector<uint8_t>& mask,
                             std::vector<size_t> shape) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < mask.size(); ++i)
    t[i] = mask[i] ? 0.0 : kMaskPenalty;
  return t;
}

}  // namespace detail

// Multi-head scaled dot-product attention over x [L x d]. Padded key
// positions take an additive -1e9 penalty before the softmax. Appends the
// per-head weight matrices to *attention when provided.
inline NodeId self_attention(Tape& tape, NodeId x, const ModelParams& params,
                             const ParamLeaves& leaves,
                             const TransformerConfig& cfg,
                             const std::vector<uint8_t>& mask,
                             std::vector<NodeId>* attention = nullptr) {
  size_t L = tape.value(x).shape()[0];
  if (mask.size() != L)
    throw ShapeError("mask length " + std::to_string(mask.size()) +
                     " does not match sequence length " + std::to_string(L));
  size_t dh = cfg.per_head();
  NodeId q = tape.matmul(x, leaves.of(params, "attn.wq"));
  NodeId k = tape.matmul(x, leaves.of(params, "attn.wk"));
  NodeId v = tape.matmul(x, leaves.of(params, "attn.wv"));
  NodeId key_penalty = tape.constant(detail::penalty_vector(mask, {L}));
  std::vector<NodeId> heads;
  heads.reserve(cfg.num_heads);
  for (size_t h = 0; h < cfg.num_heads; ++h) {
    NodeId qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
    NodeId kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
    NodeId vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
    NodeId scores =
        tape.scale(tape.matmul_nt(qh, kh), 1.0 / std::sqrt(double(dh)));
    NodeId weights = tape.softmax_rows(tape.add_bias(scores, key_penalty));
    if (attention) attention->push_back(weights);
    heads.push_back(tape.matmul(weights, vh));
  }
  NodeId ctx = cfg.num_heads == 1 ? heads[0] : tape.concat_cols(heads);
  return tape.matmul(ctx, leaves.of(params, "attn.wo"));
}

// Post-norm residual encoder:
//   y   = LayerNorm(x + Dropout(SelfAttention(x)))
//   out = LayerNorm(y + Dropout(FFN(y))),  FFN = ReLU affine then affine
inline NodeId encoder_block(Tape& tape, NodeId x, const ModelParams& params,
                            const ParamLeaves& leaves,
                            const TransformerConfig& cfg,
                            const std::vector<uint8_t>& mask, bool train,
                            std::vector<NodeId>* attention = nullptr) {
  NodeId attn = self_attention(tape, x, params, leaves, cfg, mask, attention);
  NodeId y = tape.layer_norm(
      tape.add(x, tape.dropout(attn, cfg.dropout_rate, train)),
      leaves.of(params, "ln1.gain"), leaves.of(params, "ln1.shift"));
  NodeId hidden = tape.relu(
      tape.add_bias(tape.matmul(y, leaves.of(params, "ffn.w1")),
                    leaves.of(params, "ffn.b1")));
  NodeId ffn = tape.add_bias(tape.matmul(hidden, leaves.of(params, "ffn.w2")),
                             leaves.of(params, "ffn.b2"));
  return tape.layer_norm(
      tape.add(y, tape.dropout(ffn, cfg.dropout_rate, train)),
      leaves.of(params, "ln2.gain"), leaves.of(params, "ln2.shift"));
}

// Additive attention pooling: score_i = u . tanh(W x_i) over unmasked rows,
// softmax weights, weighted sum. Returns the pooled [1 x d]; *pool_weights
// receives the [1 x L] weight node.
inline NodeId attention_pooling(Tape& tape, NodeId x, const ModelParams& params,
                                const ParamLeaves& leaves,
                                const std::vector<uint8_t>& mask,
                                NodeId* pool_weights = nullptr) {
  size_t L = tape.value(x).shape()[0];
  if (mask.size() != L)
    throw ShapeError("mask length does not match sequence length");
  bool any = false;
  for (uint8_t m : mask) any = any || m;
  if (!any) throw EmptyWindow("attention pooling over fully masked window");
  NodeId keys = tape.tanh_act(tape.matmul(x, leaves.of(params, "pool.w")));
  NodeId scores = tape.matmul_nt(leaves.of(params, "pool.u"), keys);  // [1 x L]
  NodeId masked =
      tape.add(scores, tape.constant(detail::penalty_vector(mask, {1, L})));
  NodeId weights = tape.softmax_rows(masked);
  if (pool_weights) *pool_weights = weights;
  return tape.matmul(weights, x);
}

struct ModelGraph {
  NodeId probs = -1;              // [1 x num_classes]
  std::vector<NodeId> attention;  // per-head [L x L], transformer only
  NodeId pool_weights = -1;       // [1 x L], transformer only
  ParamLeaves leaves;
};

// Embedding + positional encoding -> encoder block -> attention pooling ->
// Dropout -> Dense ReLU -> Dropout -> Linear -> softmax.
inline ModelGraph build_transformer(Tape& tape, const ModelParams& params,
                                    const TransformerConfig& cfg,
                                    const std::vector<int32_t>& ids,
                                    bool train) {
  cfg.validate();
  if (ids.empty()) throw EmptyWindow("empty id sequence");
  if (ids.size() > cfg.max_length)
    throw ShapeError("sequence of " + std::to_string(ids.size()) +
                     " ids exceeds max_length " +
                     std::to_string(cfg.max_length));
  std::vector<uint8_t> mask = pad_mask_of(ids);
  ModelGraph g;
  g.leaves = push_param_leaves(tape, params);
  size_t d = cfg.embedding_dim;
  NodeId emb = tape.embed(g.leaves.of(params, "embedding"), ids);
  NodeId x = tape.add(emb, tape.constant(positional_encoding(ids.size(), d)));
  NodeId enc =
      encoder_block(tape, x, params, g.leaves, cfg, mask, train, &g.attention);
  NodeId pooled =
      attention_pooling(tape, enc, params, g.leaves, mask, &g.pool_weights);
  NodeId h = tape.dropout(pooled, cfg.dropout_rate, train);
  NodeId h2 = tape.relu(tape.add_bias(
      tape.matmul(h, g.leaves.of(params, "dense.w")),
      g.leaves.of(params, "dense.b")));
  NodeId h3 = tape.dropout(h2, cfg.dropout_rate, train);
  NodeId logits = tape.add_bias(
      tape.matmul(h3, g.leaves.of(params, "out.w")),
      g.leaves.of(params, "out.b"));
  g.probs = tape.softmax_rows(logits);
  return g;
}

// Embedding -> single-layer LSTM (gate order i, f, g, o) -> last unmasked
// hidden state -> Dropout -> Dense ReLU -> Dropout -> Linear -> softmax.
// Padding is tail-only by construction of the window module, so the loop
// simply stops at the first PAD.
inline ModelGraph build_lstm(Tape& tape, const ModelParams& params,
                             const LstmConfig& cfg,
                             const std::vector<int32_t>& ids, bool train) {
  cfg.validate();
  if (ids.empty()) throw EmptyWindow("empty id sequence");
  if (ids.size() > cfg.max_length)
    throw ShapeError("sequence exceeds max_length");
  size_t l_real = 0;
  while (l_real < ids.size() && ids[l_real] != kPadId) ++l_real;
  if (l_real == 0) throw EmptyWindow("sequence is all padding");
  ModelGraph g;
  g.leaves = push_param_leaves(tape, params);
  size_t hdim = cfg.hidden_size;
  std::vector<int32_t> real_ids(ids.begin(), ids.begin() + l_real);
  NodeId emb = tape.embed(g.leaves.of(params, "embedding"), real_ids);
  NodeId wx = g.leaves.of(params, "lstm.wx");
  NodeId wh = g.leaves.of(params, "lstm.wh");
  NodeId b = g.leaves.of(params, "lstm.b");
  NodeId h = tape.constant(Tensor({1, hdim}));
  NodeId c = tape.constant(Tensor({1, hdim}));
  for (size_t t = 0; t < l_real; ++t) {
    NodeId xt = tape.slice_rows(emb, t, t + 1);
    NodeId z = tape.add_bias(tape.add(tape.matmul(xt, wx), tape.matmul(h, wh)),
                             b);
    NodeId gi = tape.sigmoid(tape.slice_cols(z, 0, hdim));
    NodeId gf = tape.sigmoid(tape.slice_cols(z, hdim, 2 * hdim));
    NodeId gg = tape.tanh_act(tape.slice_cols(z, 2 * hdim, 3 * hdim));
    NodeId go = tape.sigmoid(tape.slice_cols(z, 3 * hdim, 4 * hdim));
    c = tape.add(tape.mul(gf, c), tape.mul(gi, gg));
    h = tape.mul(go, tape.tanh_act(c));
  }
  NodeId r = tape.dropout(h, cfg.dropout_rate, train);
  NodeId r2 = tape.relu(tape.add_bias(
      tape.matmul(r, g.leaves.of(params, "dense.w")),
      g.leaves.of(params, "dense.b")));
  NodeId r3 = tape.dropout(r2, cfg.dropout_rate, train);
  NodeId logits = tape.add_bias(
      tape.matmul(r3, g.leaves.of(params, "out.w")),
      g.leaves.of(params, "out.b"));
  g.probs = tape.softmax_rows(logits);
  return g;
}

// Gradients keyed by parameter name, in parameter order, shapes matching
// their parameters exactly.
using GradientSet = std::vector<std::pair<std::string, Tensor>>;

inline GradientSet gradient_set(const Tape& tape, const ModelParams& params,
                                const ParamLeaves& leaves) {
  GradientSet out;
  out.reserve(params.named.size());
  for (size_t i = 0; i < params.named.size(); ++i)
    out.emplace_back(params.named[i].first, tape.grad(leaves.order[i]));
  return out;
}

struct AttentionTrace {
  std::vector<Tensor> head_weights;  // per head [L x L]
  Tensor pool_weights;               // [1 x L]
};

struct ForwardResult {
  std::vector<double> probs;
  AttentionTrace trace;
};

inline ForwardResult transformer_forward(const ModelParams& params,
                                         const TransformerConfig& cfg,
                                         const std::vector<int32_t>& ids,
                                         bool train = false,
                                         Rng* dropout_rng = nullptr) {
  Tape tape(dropout_rng);
  ModelGraph g = build_transformer(tape, params, cfg, ids, train);
  ForwardResult r;
  r.probs = tape.value(g.probs).values();
  for (NodeId a : g.attention) r.trace.head_weights.push_back(tape.value(a));
  r.trace.pool_weights = tape.value(g.pool_weights);
  return r;
}

inline std::vector<double> lstm_forward(const ModelParams& params,
                                        const LstmConfig& cfg,
                                        const std::vector<int32_t>& ids,
                                        bool train = false,
                                        Rng* dropout_rng = nullptr) {
  Tape tape(dropout_rng);
  ModelGraph g = build_lstm(tape, params, cfg, ids, train);
  return tape.value(g.probs).values();
}

}  // namespace evmscan
