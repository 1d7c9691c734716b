// evmscan: sequence-model vulnerability scanning for EVM bytecode
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>

#include "evmscan/autodiff.hpp"
#include "evmscan/tensor.hpp"
#include "evmscan/util.hpp"
#include "fd_check.hpp"

using namespace evmscan;

namespace {

Tensor random_tensor(std::vector<size_t> shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.next_range(lo, hi);
  return t;
}

// Keeps ReLU inputs away from the kink so finite differences stay clean.
Tensor random_tensor_off_zero(std::vector<size_t> shape, Rng& rng) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (size_t i = 0; i < t.size(); ++i)
    t[i] += t[i] < 0 ? -0.05 : 0.05;
  return t;
}

// Builds a graph from the current parameter values and returns a scalar loss
// node. The same builder runs for the analytic pass and for every finite
// difference evaluation.
using GraphFn = std::function<NodeId(Tape&, const std::vector<NodeId>&)>;

void check_gradients(std::vector<Tensor>& params, const GraphFn& graph,
                     uint64_t tape_seed = 7) {
  auto loss_value = [&]() {
    Tape t(tape_seed);
    std::vector<NodeId> ids;
    ids.reserve(params.size());
    for (Tensor& p : params) ids.push_back(t.leaf(p, true));
    return t.value(graph(t, ids))[0];
  };
  Tape t(tape_seed);
  std::vector<NodeId> ids;
  for (Tensor& p : params) ids.push_back(t.leaf(p, true));
  NodeId loss = graph(t, ids);
  t.backward(loss);
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor analytic = t.grad(ids[i]);
    fd::Report rep = fd::check_gradient(params[i], analytic, loss_value);
    CHECK(rep.max_rel <= 1e-6);
  }
}

// Scalarizes a tensor node with fixed random weights; a plain sum would give
// zero gradients for normalization-style ops.
NodeId weighted_sum(Tape& t, NodeId x, uint64_t seed) {
  Rng rng(seed);
  Tensor w = random_tensor(t.value(x).shape(), rng);
  return t.reduce_sum(t.mul(x, t.constant(w)));
}

}  // namespace

TEST_CASE("matmul identity and hand-computed product") {
  Tape t;
  NodeId eye = t.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  NodeId v = t.constant(Tensor({2, 1}, {5, 6}));
  CHECK(t.value(t.matmul(eye, v)).values() == std::vector<double>{5, 6});

  NodeId a = t.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  CHECK(t.value(t.matmul(a, v)).values() == std::vector<double>{17, 39});
}

TEST_CASE("matmul matches an independent naive triple loop") {
  Rng rng(42);
  Tensor a = random_tensor({7, 5}, rng);
  Tensor b = random_tensor({5, 3}, rng);
  Tape t;
  Tensor got = t.value(t.matmul(t.constant(a), t.constant(b)));
  for (size_t i = 0; i < 7; ++i) {
    for (size_t j = 0; j < 3; ++j) {
      double want = 0.0;
      for (size_t k = 0; k < 5; ++k) want += a[i * 5 + k] * b[k * 3 + j];
      CHECK(std::fabs(got[i * 3 + j] - want) <= 1e-12);
    }
  }
}

TEST_CASE("matmul_nt equals matmul against the explicit transpose") {
  Rng rng(43);
  Tensor a = random_tensor({4, 6}, rng);
  Tensor b = random_tensor({5, 6}, rng);
  Tensor bt({6, 5});
  for (size_t i = 0; i < 5; ++i)
    for (size_t j = 0; j < 6; ++j) bt[j * 5 + i] = b[i * 6 + j];
  Tape t;
  Tensor got = t.value(t.matmul_nt(t.constant(a), t.constant(b)));
  Tensor want = t.value(t.matmul(t.constant(a), t.constant(bt)));
  for (size_t i = 0; i < got.size(); ++i)
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-14));
}

TEST_CASE("matmul rejects mismatched shapes") {
  Tape t;
  NodeId a = t.constant(Tensor({2, 3}));
  NodeId b = t.constant(Tensor({2, 3}));
  CHECK_THROWS_AS(t.matmul(a, b), ShapeError);
}

TEST_CASE("softmax closed forms") {
  Tape t;
  Tensor two = t.value(t.softmax_rows(t.constant(Tensor({2}, {0, 0}))));
  CHECK(two[0] == doctest::Approx(0.5).epsilon(1e-12));
  Tensor skew =
      t.value(t.softmax_rows(t.constant(Tensor({2}, {std::log(2.0), 0}))));
  CHECK(skew[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(skew[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax matches the direct exp/sum formula") {
  Rng rng(44);
  Tensor x = random_tensor({9}, rng, -3.0, 3.0);
  Tape t;
  Tensor got = t.value(t.softmax_rows(t.constant(x)));
  double denom = 0.0;
  for (size_t i = 0; i < 9; ++i) denom += std::exp(x[i]);
  for (size_t i = 0; i < 9; ++i)
    CHECK(std::fabs(got[i] - std::exp(x[i]) / denom) <= 1e-12);
}

TEST_CASE("softmax rows sum to one across wide input ranges") {
  Rng rng(45);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({4, 11}, rng, -50.0, 50.0);
    Tape t;
    Tensor y = t.value(t.softmax_rows(t.constant(x)));
    for (size_t r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (size_t j = 0; j < 11; ++j) sum += y[r * 11 + j];
      CHECK(std::fabs(sum - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("product rule: f = x*y at (2,3) gives gradients (3,2)") {
  Tape t;
  NodeId x = t.leaf(Tensor::scalar(2.0), true);
  NodeId y = t.leaf(Tensor::scalar(3.0), true);
  NodeId f = t.reduce_sum(t.mul(x, y));
  t.backward(f);
  CHECK(t.grad(x)[0] == 3.0);
  CHECK(t.grad(y)[0] == 2.0);
}

TEST_CASE("softmax plus cross-entropy gradient matches finite differences") {
  Rng rng(46);
  std::vector<Tensor> params = {random_tensor({1, 4}, rng, -2.0, 2.0)};
  check_gradients(params, [](Tape& t, const std::vector<NodeId>& p) {
    return t.ce_loss(t.softmax_rows(p[0]), 2);
  });
}

TEST_CASE("every primitive passes the finite-difference check on 3 seeds") {
  for (uint64_t seed : {11ull, 22ull, 33ull}) {
    Rng rng(seed);
    size_t r = 2 + rng.next_below(4);
    size_t c = 2 + rng.next_below(4);
    size_t k = 2 + rng.next_below(3);

    {  // add / sub / mul / scale
      std::vector<Tensor> ps = {random_tensor({r, c}, rng),
                                random_tensor({r, c}, rng)};
      check_gradients(ps, [seed](Tape& t, const std::vector<NodeId>& p) {
        NodeId mixed = t.add(t.mul(p[0], p[1]), t.sub(p[0], p[1]));
        return weighted_sum(t, t.scale(mixed, 1.7), seed);
      });
    }
    {  // add_bias
      std::vector<Tensor> ps = {random_tensor({r, c}, rng),
                                random_tensor({c}, rng)};
      check_gradients(ps, [seed](Tape& t, const std::vector<NodeId>& p) {
        return weighted_sum(t, t.add_bias(p[0], p[1]), seed);
      });
    }
    {  // matmul and matmul_nt
      std::vector<Tensor> ps = {random_tensor({r, k}, rng),
                                random_tensor({k, c}, rng),
                                random_tensor({k, c}, rng)};
      check_gradients(ps, [seed](Tape& t, const std::vector<NodeId>& p) {
        NodeId nn = t.matmul(p[0], p[1]);
        NodeId nt = t.matmul_nt(nn, p[2]);
        return weighted_sum(t, nt, seed);
      });
    }
    {  // embedding gather with repeated ids
      std::vector<Tensor> ps = {random_tensor({6, c}, rng)};
      std::vector<int32_t> ids = {0, 3, 3, 5, 1, 3};
      check_gradients(ps, [seed, ids](Tape& t, const std::vector<NodeId>& p) {
        return weighted_sum(t, t.embed(p[0], ids), seed);
      });
    }
    {  // softmax
      std::vector<Tensor> ps = {random_tensor({r, c}, rng, -2.0, 2.0)};
      check_gradients(ps, [seed](Tape& t, const std::vector<NodeId>& p) {
        return weighted_sum(t, t.softmax_rows(p[0]), seed);
      });
    }
    {  // relu / tanh / sigmoid
      std::vector<Tensor> ps = {random_tensor_off_zero({r, c}, rng)};
      check_gradients(ps, [seed](Tape& t, const std::vector<NodeId>& p) {
        NodeId mix = t.add(t.relu(p[0]), t.mul(t.tanh_act(p[0]),
                                               t.sigmoid(p[0])));
        return weighted_sum(t, mix, seed);
      });
    }
    {  // layer_norm
      std::vector<Tensor> ps = {random_tensor({r, c}, rng),
                                random_tensor({c}, rng, 0.5, 1.5),
                                random_tensor({c}, rng)};
      check_gradients(ps, [seed](Tape& t, const std::vector<NodeId>& p) {
        return weighted_sum(t, t.layer_norm(p[0], p[1], p[2]), seed);
      });
    }
    {  // dropout in training mode with a pinned mask seed
      std::vector<Tensor> ps = {random_tensor({r, c}, rng)};
      check_gradients(ps, [seed](Tape& t, const std::vector<NodeId>& p) {
        return weighted_sum(t, t.dropout(p[0], 0.4, true), seed);
      }, /*tape_seed=*/seed + 100);
    }
    {  // concat_cols and slices
      std::vector<Tensor> ps = {random_tensor({r, 2}, rng),
                                random_tensor({r, 3}, rng),
                                random_tensor({r, c}, rng)};
      check_gradients(ps, [seed, r, c](Tape& t, const std::vector<NodeId>& p) {
        NodeId cat = t.concat_cols({p[0], p[1], p[2]});
        NodeId left = t.slice_cols(cat, 0, 4);
        NodeId rows = t.slice_rows(left, 0, r > 1 ? r - 1 : 1);
        return weighted_sum(t, rows, seed);
      });
    }
    {  // reductions
      std::vector<Tensor> ps = {random_tensor({r, c}, rng)};
      check_gradients(ps, [](Tape& t, const std::vector<NodeId>& p) {
        return t.add(t.reduce_sum(p[0]), t.scale(t.reduce_mean(p[0]), 0.3));
      });
    }
    {  // binary cross-entropy through a sigmoid
      std::vector<Tensor> ps = {random_tensor({1}, rng, -1.5, 1.5)};
      check_gradients(ps, [](Tape& t, const std::vector<NodeId>& p) {
        return t.bce_loss(t.sigmoid(p[0]), 1.0);
      });
      check_gradients(ps, [](Tape& t, const std::vector<NodeId>& p) {
        return t.bce_loss(t.sigmoid(p[0]), 0.0);
      });
    }
    {  // categorical cross-entropy through a softmax
      std::vector<Tensor> ps = {random_tensor({1, 5}, rng, -2.0, 2.0)};
      check_gradients(ps, [](Tape& t, const std::vector<NodeId>& p) {
        return t.ce_loss(t.softmax_rows(p[0]), 4);
      });
    }
  }
}

TEST_CASE("binary cross-entropy equals two-way categorical cross-entropy") {
  Rng rng(48);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor logits = random_tensor({1, 2}, rng, -3.0, 3.0);
    Tape t;
    NodeId probs = t.softmax_rows(t.constant(logits));
    NodeId p1 = t.slice_cols(probs, 1, 2);
    double ce = t.value(t.ce_loss(probs, 1))[0];
    double bce = t.value(t.bce_loss(p1, 1.0))[0];
    CHECK(ce == doctest::Approx(bce).epsilon(1e-12));
  }
}

TEST_CASE("dropout is the identity at inference") {
  Rng rng(49);
  Tensor x = random_tensor({5, 7}, rng);
  Tape t(123u);
  Tensor y = t.value(t.dropout(t.constant(x), 0.4, false));
  CHECK(y.values() == x.values());
}

TEST_CASE("training dropout preserves the expectation within 1 percent") {
  Tensor x({1000});
  for (size_t i = 0; i < x.size(); ++i) x[i] = 1.0;
  double total = 0.0;
  size_t draws = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Tape t(seed);
    Tensor y = t.value(t.dropout(t.constant(x), 0.2, true));
    for (size_t i = 0; i < y.size(); ++i) total += y[i];
    draws += y.size();
  }
  CHECK(draws == 100000);
  double mean = total / static_cast<double>(draws);
  CHECK(std::fabs(mean - 1.0) <= 0.01);
}

TEST_CASE("backward is deterministic for the same graph and seed") {
  Rng rng(50);
  Tensor a = random_tensor({3, 3}, rng);
  Tensor b = random_tensor({3, 3}, rng);
  auto run = [&]() {
    Tape t(99u);
    NodeId na = t.leaf(a, true);
    NodeId nb = t.leaf(b, true);
    NodeId loss = t.reduce_sum(
        t.dropout(t.matmul(t.tanh_act(na), nb), 0.3, true));
    t.backward(loss);
    return t.grad(na).values();
  };
  CHECK(run() == run());
}

TEST_CASE("backward requires a scalar target") {
  Tape t;
  NodeId a = t.leaf(Tensor({2, 2}), true);
  CHECK_THROWS_AS(t.backward(a), ShapeError);
}

TEST_CASE("gradients flow through shared subexpressions") {
  // f = (x + x) * x = 2x^2, df/dx = 4x.
  Tape t;
  NodeId x = t.leaf(Tensor::scalar(1.5), true);
  NodeId f = t.reduce_sum(t.mul(t.add(x, x), x));
  t.backward(f);
  CHECK(t.grad(x)[0] == doctest::Approx(6.0).epsilon(1e-12));
}
