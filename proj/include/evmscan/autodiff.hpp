// evmscan: sequence-model vulnerability scanning for EVM bytecode
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "evmscan/tensor.hpp"
#include "evmscan/util.hpp"

namespace evmscan {

using NodeId = int32_t;

// Reverse-mode tape. Each primitive records its output tensor plus a closure
// that routes the output gradient to the parents; backward() replays the
// closures in reverse creation order. Nodes are append-only, so a tape is a
// topologically ordered acyclic graph by construction.
//
// Tensors on the tape are immutable once recorded. A tape is single-threaded;
// independent tapes may run on separate threads.
class Tape {
 public:
  Tape() = default;
  explicit Tape(uint64_t dropout_seed) : owned_rng_(Rng(dropout_seed)) {
    rng_ = &*owned_rng_;
  }
  explicit Tape(Rng* rng) : rng_(rng) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  NodeId leaf(Tensor value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, {}, nullptr);
  }

  NodeId constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(NodeId id) const { return nodes_[id].value; }

  // Gradient of the last backward() target w.r.t. this node. Zero tensor if
  // the node did not participate.
  Tensor grad(NodeId id) const {
    const Node& n = nodes_[id];
    return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
  }

  size_t node_count() const { return nodes_.size(); }

  // ---- elementwise ----

  NodeId add(NodeId a, NodeId b) {
    check_same(a, b, "add");
    Tensor out = nodes_[a].value;
    const Tensor& vb = nodes_[b].value;
    for (size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
    return push(std::move(out), needs(a) || needs(b), {a, b},
                [a, b](Tape& tp, NodeId self) {
                  const Tensor& g = tp.nodes_[self].grad;
                  if (tp.needs(a)) {
                    Tensor& ga = tp.grad_buf(a);
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  }
                  if (tp.needs(b)) {
                    Tensor& gb = tp.grad_buf(b);
                    for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                  }
                });
  }

  NodeId sub(NodeId a, NodeId b) {
    check_same(a, b, "sub");
    Tensor out = nodes_[a].value;
    const Tensor& vb = nodes_[b].value;
    for (size_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
    return push(std::move(out), needs(a) || needs(b), {a, b},
                [a, b](Tape& tp, NodeId self) {
                  const Tensor& g = tp.nodes_[self].grad;
                  if (tp.needs(a)) {
                    Tensor& ga = tp.grad_buf(a);
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  }
                  if (tp.needs(b)) {
                    Tensor& gb = tp.grad_buf(b);
                    for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                  }
                });
  }

  NodeId mul(NodeId a, NodeId b) {
    check_same(a, b, "mul");
    Tensor out = nodes_[a].value;
    const Tensor& vb = nodes_[b].value;
    for (size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
    return push(std::move(out), needs(a) || needs(b), {a, b},
                [a, b](Tape& tp, NodeId self) {
                  const Tensor& g = tp.nodes_[self].grad;
                  const Tensor& va = tp.nodes_[a].value;
                  const Tensor& vb2 = tp.nodes_[b].value;
                  if (tp.needs(a)) {
                    Tensor& ga = tp.grad_buf(a);
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb2[i];
                  }
                  if (tp.needs(b)) {
                    Tensor& gb = tp.grad_buf(b);
                    for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
                  }
                });
  }

  NodeId scale(NodeId a, double s) {
    Tensor out = nodes_[a].value;
    for (size_t i = 0; i < out.size(); ++i) out[i] *= s;
    return push(std::move(out), needs(a), {a},
                [a, s](Tape& tp, NodeId self) {
                  if (!tp.needs(a)) return;
                  const Tensor& g = tp.nodes_[self].grad;
                  Tensor& ga = tp.grad_buf(a);
                  for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
                });
  }

  // m is [r x c]; bias is rank-1 [c], added to every row.
  NodeId add_bias(NodeId m, NodeId bias) {
    const Tensor& vm = nodes_[m].value;
    const Tensor& vb = nodes_[bias].value;
    if (vm.rank() != 2 || vb.rank() != 1 || vb.shape()[0] != vm.shape()[1])
      throw ShapeError("add_bias shape mismatch: " + vm.shape_str() + " vs " +
                       vb.shape_str());
    Tensor out = vm;
    size_t r = vm.shape()[0], c = vm.shape()[1];
    for (size_t i = 0; i < r; ++i)
      for (size_t j = 0; j < c; ++j) out[i * c + j] += vb[j];
    return push(std::move(out), needs(m) || needs(bias), {m, bias},
                [m, bias, r, c](Tape& tp, NodeId self) {
                  const Tensor& g = tp.nodes_[self].grad;
                  if (tp.needs(m)) {
                    Tensor& gm = tp.grad_buf(m);
                    for (size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
                  }
                  if (tp.needs(bias)) {
                    Tensor& gb = tp.grad_buf(bias);
                    for (size_t i = 0; i < r; ++i)
                      for (size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
                  }
                });
  }

  // ---- linear algebra ----

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor& va = nodes_[a].value;
    const Tensor& vb = nodes_[b].value;
    if (va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0])
      throw ShapeError("matmul shape mismatch: " + va.shape_str() + " x " +
                       vb.shape_str());
    size_t m = va.shape()[0], k = va.shape()[1], n = vb.shape()[1];
    Tensor out({m, n});
    detail::matmul_nn(va.data(), vb.data(), out.data(), m, k, n, true);
    return push(std::move(out), needs(a) || needs(b), {a, b},
                [a, b, m, k, n](Tape& tp, NodeId self) {
                  const Tensor& g = tp.nodes_[self].grad;
                  const Tensor& va2 = tp.nodes_[a].value;
                  const Tensor& vb2 = tp.nodes_[b].value;
                  if (tp.needs(a)) {
                    Tensor& ga = tp.grad_buf(a);
                    detail::matmul_nt(g.data(), vb2.data(), ga.data(), m, n, k,
                                      true);
                  }
                  if (tp.needs(b)) {
                    Tensor& gb = tp.grad_buf(b);
                    detail::matmul_tn(va2.data(), g.data(), gb.data(), m, k, n,
                                      true);
                  }
                });
  }

  // a [m x k] times b^T with b stored [n x k]; avoids materialized transposes
  // for attention scores and pooling.
  NodeId matmul_nt(NodeId a, NodeId b) {
    const Tensor& va = nodes_[a].value;
    const Tensor& vb = nodes_[b].value;
    if (va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[1])
      throw ShapeError("matmul_nt shape mismatch: " + va.shape_str() + " x " +
                       vb.shape_str() + "^T");
    size_t m = va.shape()[0], k = va.shape()[1], n = vb.shape()[0];
    Tensor out({m, n});
    detail::matmul_nt(va.data(), vb.data(), out.data(), m, k, n, false);
    return push(std::move(out), needs(a) || needs(b), {a, b},
                [a, b, m, k, n](Tape& tp, NodeId self) {
                  const Tensor& g = tp.nodes_[self].grad;
                  const Tensor& va2 = tp.nodes_[a].value;
                  const Tensor& vb2 = tp.nodes_[b].value;
                  if (tp.needs(a)) {
                    Tensor& ga = tp.grad_buf(a);
                    detail::matmul_nn(g.data(), vb2.data(), ga.data(), m, n, k,
                                      true);
                  }
                  if (tp.needs(b)) {
                    Tensor& gb = tp.grad_buf(b);
                    detail::matmul_tn(g.data(), va2.data(), gb.data(), m, n, k,
                                      true);
                  }
                });
  }

  // Gather rows of table by id. Ids are data, not differentiable inputs.
  NodeId embed(NodeId table, std::vector<int32_t> ids) {
    const Tensor& vt = nodes_[table].value;
    if (vt.rank() != 2)
      throw ShapeError("embed table must be rank 2, got " + vt.shape_str());
    size_t v = vt.shape()[0], d = vt.shape()[1];
    for (int32_t id : ids)
      if (id < 0 || static_cast<size_t>(id) >= v)
        throw UnknownId("embedding id " + std::to_string(id) +
                        " outside table of " + std::to_string(v) + " rows");
    Tensor out({ids.size(), d});
    for (size_t i = 0; i < ids.size(); ++i)
      for (size_t j = 0; j < d; ++j)
        out[i * d + j] = vt[static_cast<size_t>(ids[i]) * d + j];
    return push(std::move(out), needs(table), {table},
                [table, ids = std::move(ids), d](Tape& tp, NodeId self) {
                  if (!tp.needs(table)) return;
                  const Tensor& g = tp.nodes_[self].grad;
                  Tensor& gt = tp.grad_buf(table);
                  for (size_t i = 0; i < ids.size(); ++i)
                    for (size_t j = 0; j < d; ++j)
                      gt[static_cast<size_t>(ids[i]) * d + j] += g[i * d + j];
                });
  }

  // ---- activations ----

  NodeId relu(NodeId a) {
    Tensor out = nodes_[a].value;
    for (size_t i = 0; i < out.size(); ++i)
      if (out[i] < 0.0) out[i] = 0.0;
    return push(std::move(out), needs(a), {a},
                [a](Tape& tp, NodeId self) {
                  if (!tp.needs(a)) return;
                  const Tensor& g = tp.nodes_[self].grad;
                  const Tensor& x = tp.nodes_[a].value;
                  Tensor& ga = tp.grad_buf(a);
                  for (size_t i = 0; i < g.size(); ++i)
                    if (x[i] > 0.0) ga[i] += g[i];
                });
  }

  NodeId tanh_act(NodeId a) {
    Tensor out = nodes_[a].value;
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    return push(std::move(out), needs(a), {a},
                [a](Tape& tp, NodeId self) {
                  if (!tp.needs(a)) return;
                  const Tensor& g = tp.nodes_[self].grad;
                  const Tensor& y = tp.nodes_[self].value;
                  Tensor& ga = tp.grad_buf(a);
                  for (size_t i = 0; i < g.size(); ++i)
                    ga[i] += g[i] * (1.0 - y[i] * y[i]);
                });
  }

  NodeId sigmoid(NodeId a) {
    Tensor out = nodes_[a].value;
    for (size_t i = 0; i < out.size(); ++i)
      out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    return push(std::move(out), needs(a), {a},
                [a](Tape& tp, NodeId self) {
                  if (!tp.needs(a)) return;
                  const Tensor& g = tp.nodes_[self].grad;
                  const Tensor& y = tp.nodes_[self].value;
                  Tensor& ga = tp.grad_buf(a);
                  for (size_t i = 0; i < g.size(); ++i)
                    ga[i] += g[i] * y[i] * (1.0 - y[i]);
                });
  }

  // Stabilized softmax over the last axis.
  NodeId softmax_rows(NodeId a) {
    const Tensor& va = nodes_[a].value;
    if (va.rank() == 0 || va.size() == 0)
      throw ShapeError("softmax of empty tensor");
    size_t n = va.shape().back();
    size_t outer = va.size() / n;
    Tensor out = va;
    for (size_t r = 0; r < outer; ++r) {
      double* row = out.data() + r * n;
      double mx = row[0];
      for (size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (size_t j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      for (size_t j = 0; j < n; ++j) row[j] /= sum;
    }
    return push(std::move(out), needs(a), {a},
                [a, outer, n](Tape& tp, NodeId self) {
                  if (!tp.needs(a)) return;
                  const Tensor& g = tp.nodes_[self].grad;
                  const Tensor& y = tp.nodes_[self].value;
                  Tensor& ga = tp.grad_buf(a);
                  for (size_t r = 0; r < outer; ++r) {
                    const double* gr = g.data() + r * n;
                    const double* yr = y.data() + r * n;
                    double dot = 0.0;
                    for (size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
                    double* gar = ga.data() + r * n;
                    for (size_t j = 0; j < n; ++j)
                      gar[j] += yr[j] * (gr[j] - dot);
                  }
                });
  }

  // Per-row normalization of a [r x c] input with learned gain/shift [c].
  NodeId layer_norm(NodeId x, NodeId gain, NodeId shift, double eps = 1e-5) {
    const Tensor& vx = nodes_[x].value;
    const Tensor& vg = nodes_[gain].value;
    const Tensor& vs = nodes_[shift].value;
    if (vx.rank() != 2 || vg.rank() != 1 || vs.rank() != 1 ||
        vg.shape()[0] != vx.shape()[1] || vs.shape()[0] != vx.shape()[1])
      throw ShapeError("layer_norm shape mismatch: " + vx.shape_str() +
                       " with gain " + vg.shape_str());
    size_t r = vx.shape()[0], c = vx.shape()[1];
    Tensor out({r, c});
    Tensor xhat({r, c});
    std::vector<double> inv_std(r);
    for (size_t i = 0; i < r; ++i) {
      const double* xi = vx.data() + i * c;
      double mean = 0.0;
      for (size_t j = 0; j < c; ++j) mean += xi[j];
      mean /= static_cast<double>(c);
      double var = 0.0;
      for (size_t j = 0; j < c; ++j) {
        double d = xi[j] - mean;
        var += d * d;
      }
      var /= static_cast<double>(c);
      double is = 1.0 / std::sqrt(var + eps);
      inv_std[i] = is;
      for (size_t j = 0; j < c; ++j) {
        double xh = (xi[j] - mean) * is;
        xhat[i * c + j] = xh;
        out[i * c + j] = xh * vg[j] + vs[j];
      }
    }
    return push(
        std::move(out), needs(x) || needs(gain) || needs(shift),
        {x, gain, shift},
        [x, gain, shift, r, c, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](Tape& tp, NodeId self) {
          const Tensor& g = tp.nodes_[self].grad;
          const Tensor& vg2 = tp.nodes_[gain].value;
          if (tp.needs(gain)) {
            Tensor& gg = tp.grad_buf(gain);
            for (size_t i = 0; i < r; ++i)
              for (size_t j = 0; j < c; ++j)
                gg[j] += g[i * c + j] * xhat[i * c + j];
          }
          if (tp.needs(shift)) {
            Tensor& gs = tp.grad_buf(shift);
            for (size_t i = 0; i < r; ++i)
              for (size_t j = 0; j < c; ++j) gs[j] += g[i * c + j];
          }
          if (tp.needs(x)) {
            Tensor& gx = tp.grad_buf(x);
            std::vector<double> dxhat(c);
            for (size_t i = 0; i < r; ++i) {
              double mean_dx = 0.0, mean_dxxh = 0.0;
              for (size_t j = 0; j < c; ++j) {
                dxhat[j] = g[i * c + j] * vg2[j];
                mean_dx += dxhat[j];
                mean_dxxh += dxhat[j] * xhat[i * c + j];
              }
              mean_dx /= static_cast<double>(c);
              mean_dxxh /= static_cast<double>(c);
              for (size_t j = 0; j < c; ++j)
                gx[i * c + j] += inv_std[i] * (dxhat[j] - mean_dx -
                                               xhat[i * c + j] * mean_dxxh);
            }
          }
        });
  }

  // Inverted dropout: in training mode surviving entries scale by 1/(1-rate)
  // so inference is a pure forward pass.
  NodeId dropout(NodeId a, double rate, bool train) {
    if (rate < 0.0 || rate >= 1.0)
      throw Error("dropout rate must be in [0, 1), got " +
                  std::to_string(rate));
    if (!train || rate == 0.0) {
      Tensor out = nodes_[a].value;
      return push(std::move(out), needs(a), {a},
                  [a](Tape& tp, NodeId self) {
                    if (!tp.needs(a)) return;
                    const Tensor& g = tp.nodes_[self].grad;
                    Tensor& ga = tp.grad_buf(a);
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  });
    }
    if (rng_ == nullptr)
      throw Error("dropout in training mode requires a seeded rng");
    const Tensor& va = nodes_[a].value;
    double keep = 1.0 - rate;
    std::vector<double> mask(va.size());
    for (size_t i = 0; i < mask.size(); ++i)
      mask[i] = rng_->next_unit() < rate ? 0.0 : 1.0 / keep;
    Tensor out = va;
    for (size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return push(std::move(out), needs(a), {a},
                [a, mask = std::move(mask)](Tape& tp, NodeId self) {
                  if (!tp.needs(a)) return;
                  const Tensor& g = tp.nodes_[self].grad;
                  Tensor& ga = tp.grad_buf(a);
                  for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
                });
  }

  // ---- reshaping ----

  NodeId concat_cols(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols of zero tensors");
    size_t r = nodes_[parts[0]].value.shape()[0];
    size_t total = 0;
    bool any = false;
    for (NodeId p : parts) {
      const Tensor& v = nodes_[p].value;
      if (v.rank() != 2 || v.shape()[0] != r)
        throw ShapeError("concat_cols row mismatch at " + v.shape_str());
      total += v.shape()[1];
      any = any || needs(p);
    }
    Tensor out({r, total});
    size_t col = 0;
    for (NodeId p : parts) {
      const Tensor& v = nodes_[p].value;
      size_t c = v.shape()[1];
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out[i * total + col + j] = v[i * c + j];
      col += c;
    }
    return push(std::move(out), any, parts,
                [parts, r, total](Tape& tp, NodeId self) {
                  const Tensor& g = tp.nodes_[self].grad;
                  size_t col = 0;
                  for (NodeId p : parts) {
                    size_t c = tp.nodes_[p].value.shape()[1];
                    if (tp.needs(p)) {
                      Tensor& gp = tp.grad_buf(p);
                      for (size_t i = 0; i < r; ++i)
                        for (size_t j = 0; j < c; ++j)
                          gp[i * c + j] += g[i * total + col + j];
                    }
                    col += c;
                  }
                });
  }

  NodeId slice_cols(NodeId a, size_t c0, size_t c1) {
    const Tensor& va = nodes_[a].value;
    if (va.rank() != 2 || c0 >= c1 || c1 > va.shape()[1])
      throw ShapeError("slice_cols [" + std::to_string(c0) + "," +
                       std::to_string(c1) + ") of " + va.shape_str());
    size_t r = va.shape()[0], c = va.shape()[1], w = c1 - c0;
    Tensor out({r, w});
    for (size_t i = 0; i < r; ++i)
      for (size_t j = 0; j < w; ++j) out[i * w + j] = va[i * c + c0 + j];
    return push(std::move(out), needs(a), {a},
                [a, r, c, c0, w](Tape& tp, NodeId self) {
                  if (!tp.needs(a)) return;
                  const Tensor& g = tp.nodes_[self].grad;
                  Tensor& ga = tp.grad_buf(a);
                  for (size_t i = 0; i < r; ++i)
                    for (size_t j = 0; j < w; ++j)
                      ga[i * c + c0 + j] += g[i * w + j];
                });
  }

  NodeId slice_rows(NodeId a, size_t r0, size_t r1) {
    const Tensor& va = nodes_[a].value;
    if (va.rank() != 2 || r0 >= r1 || r1 > va.shape()[0])
      throw ShapeError("slice_rows [" + std::to_string(r0) + "," +
                       std::to_string(r1) + ") of " + va.shape_str());
    size_t c = va.shape()[1], h = r1 - r0;
    Tensor out({h, c});
    for (size_t i = 0; i < h * c; ++i) out[i] = va[r0 * c + i];
    return push(std::move(out), needs(a), {a},
                [a, r0, c, h](Tape& tp, NodeId self) {
                  if (!tp.needs(a)) return;
                  const Tensor& g = tp.nodes_[self].grad;
                  Tensor& ga = tp.grad_buf(a);
                  for (size_t i = 0; i < h * c; ++i) ga[r0 * c + i] += g[i];
                });
  }

  // ---- reductions and losses ----

  NodeId reduce_sum(NodeId a) {
    const Tensor& va = nodes_[a].value;
    double s = 0.0;
    for (size_t i = 0; i < va.size(); ++i) s += va[i];
    return push(Tensor::scalar(s), needs(a), {a},
                [a](Tape& tp, NodeId self) {
                  if (!tp.needs(a)) return;
                  double g = tp.nodes_[self].grad[0];
                  Tensor& ga = tp.grad_buf(a);
                  for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
                });
  }

  NodeId reduce_mean(NodeId a) {
    const Tensor& va = nodes_[a].value;
    if (va.size() == 0) throw ShapeError("mean of empty tensor");
    double s = 0.0;
    for (size_t i = 0; i < va.size(); ++i) s += va[i];
    double inv = 1.0 / static_cast<double>(va.size());
    return push(Tensor::scalar(s * inv), needs(a), {a},
                [a, inv](Tape& tp, NodeId self) {
                  if (!tp.needs(a)) return;
                  double g = tp.nodes_[self].grad[0] * inv;
                  Tensor& ga = tp.grad_buf(a);
                  for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
                });
  }

  // Binary cross-entropy of a single probability against target in [0, 1].
  NodeId bce_loss(NodeId prob, double target) {
    const Tensor& vp = nodes_[prob].value;
    if (vp.size() != 1)
      throw ShapeError("bce_loss expects a single probability, got " +
                       vp.shape_str());
    double p = clamp_prob(vp[0]);
    double loss = -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
    return push(Tensor::scalar(loss), needs(prob), {prob},
                [prob, target, p](Tape& tp, NodeId self) {
                  if (!tp.needs(prob)) return;
                  double g = tp.nodes_[self].grad[0];
                  tp.grad_buf(prob)[0] +=
                      g * ((1.0 - target) / (1.0 - p) - target / p);
                });
  }

  // Categorical cross-entropy -log p[target] of a probability vector.
  NodeId ce_loss(NodeId probs, size_t target) {
    const Tensor& vp = nodes_[probs].value;
    if (target >= vp.size())
      throw ShapeError("ce_loss target " + std::to_string(target) +
                       " outside " + vp.shape_str());
    double p = clamp_prob(vp[target]);
    return push(Tensor::scalar(-std::log(p)), needs(probs), {probs},
                [probs, target, p](Tape& tp, NodeId self) {
                  if (!tp.needs(probs)) return;
                  double g = tp.nodes_[self].grad[0];
                  tp.grad_buf(probs)[target] += -g / p;
                });
  }

  // ---- differentiation ----

  void backward(NodeId loss) {
    const Tensor& v = nodes_[loss].value;
    if (v.size() != 1)
      throw ShapeError("backward target must be scalar, got " + v.shape_str());
    for (Node& n : nodes_) n.grad = Tensor();
    grad_buf(loss)[0] = 1.0;
    for (NodeId i = loss; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.requires_grad && !n.grad.empty() && n.back) n.back(*this, i);
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    std::vector<NodeId> parents;
    bool requires_grad = false;
    std::function<void(Tape&, NodeId)> back;
  };

  bool needs(NodeId id) const { return nodes_[id].requires_grad; }

  void check_same(NodeId a, NodeId b, const char* op) const {
    if (!nodes_[a].value.same_shape(nodes_[b].value))
      throw ShapeError(std::string(op) + " shape mismatch: " +
                       nodes_[a].value.shape_str() + " vs " +
                       nodes_[b].value.shape_str());
  }

  Tensor& grad_buf(NodeId id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  NodeId push(Tensor value, bool requires_grad, std::vector<NodeId> parents,
              std::function<void(Tape&, NodeId)> back) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.requires_grad = requires_grad;
    if (requires_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  static double clamp_prob(double p) {
    constexpr double lo = 1e-12;
    if (p < lo) return lo;
    if (p > 1.0 - lo) return 1.0 - lo;
    return p;
  }

  std::vector<Node> nodes_;
  std::optional<Rng> owned_rng_;
  Rng* rng_ = nullptr;
};

}  // namespace evmscan
