// evmscan: sequence-model vulnerability scanning for EVM bytecode
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "evmscan/corpus.hpp"
#include "evmscan/model.hpp"
#include "evmscan/util.hpp"
#include "evmscan/vocab.hpp"
#include "evmscan/window.hpp"

namespace evmscan {

struct TrainConfig {
  size_t batch_size = 32;
  double learning_rate = 0.0005;
  size_t epochs = 50;
  uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  size_t threads = 0;  // 0 = one worker per hardware thread

  void validate() const {
    if (batch_size < 1) throw Error("batch_size must be at least 1");
    if (learning_rate <= 0.0) throw Error("learning_rate must be positive");
  }
};

struct SplitSpec {
  double train_fraction = 0.68;
  double val_fraction = 0.15;

  void validate() const {
    if (train_fraction < 0 || val_fraction < 0 ||
        train_fraction + val_fraction >= 1.0)
      throw Error("train and validation fractions must leave a remainder");
  }
};

template <typename T>
struct Split {
  std::vector<T> train, val, test;
};

// Seeded shuffle, then train = floor(tf*n), val = floor(vf*n), test = rest.
template <typename T>
Split<T> split(const std::vector<T>& records, const SplitSpec& spec,
               uint64_t seed) {
  spec.validate();
  if (records.empty()) throw EmptyDataset("cannot split an empty dataset");
  std::vector<T> shuffled = records;
  Rng rng(seed);
  shuffle(shuffled, rng);
  size_t n = shuffled.size();
  size_t n_train = static_cast<size_t>(
      std::floor(spec.train_fraction * static_cast<double>(n)));
  size_t n_val = static_cast<size_t>(
      std::floor(spec.val_fraction * static_cast<double>(n)));
  Split<T> out;
  out.train.assign(shuffled.begin(), shuffled.begin() + n_train);
  out.val.assign(shuffled.begin() + n_train,
                 shuffled.begin() + n_train + n_val);
  out.test.assign(shuffled.begin() + n_train + n_val, shuffled.end());
  return out;
}

// ---- optimizer ----

struct AdamState {
  int64_t step = 0;
  std::vector<Tensor> m, v;  // parallel to ModelParams::named

  static AdamState init(const ModelParams& params) {
    AdamState s;
    s.m.reserve(params.named.size());
    s.v.reserve(params.named.size());
    for (const auto& [name, t] : params.named) {
      s.m.emplace_back(t.shape());
      s.v.emplace_back(t.shape());
    }
    return s;
  }
};

// Standard Adam with bias correction:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
inline void adam_step(ModelParams& params, const std::vector<Tensor>& grads,
                      AdamState& state, const TrainConfig& cfg) {
  if (grads.size() != params.named.size())
    throw ShapeError("gradient count does not match parameter count");
  for (size_t i = 0; i < grads.size(); ++i)
    if (!grads[i].same_shape(params.named[i].second))
      throw ShapeError("gradient shape " + grads[i].shape_str() +
                       " does not match parameter " + params.named[i].first);
  ++state.step;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < grads.size(); ++i) {
    Tensor& theta = params.named[i].second;
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const Tensor& g = grads[i];
    for (size_t j = 0; j < theta.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      double m_hat = m[j] / bc1;
      double v_hat = v[j] / bc2;
      theta[j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

// ---- metrics ----

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  size_t support = 0;
};

struct EvalReport {
  std::vector<std::vector<size_t>> confusion;  // rows true, columns predicted
  std::vector<ClassMetrics> per_class;
  double accuracy = 0.0;
  double loss = 0.0;
  size_t total = 0;
};

inline EvalReport make_report(const std::vector<int>& truth,
                              const std::vector<int>& predicted,
                              size_t num_classes, double loss = 0.0) {
  if (truth.size() != predicted.size())
    throw ShapeError("label and prediction counts differ");
  if (truth.empty()) throw EmptyDataset("no labeled predictions to score");
  EvalReport r;
  r.total = truth.size();
  r.loss = loss;
  r.confusion.assign(num_classes, std::vector<size_t>(num_classes, 0));
  for (size_t i = 0; i < truth.size(); ++i) {
    size_t t = static_cast<size_t>(truth[i]);
    size_t p = static_cast<size_t>(predicted[i]);
    if (t >= num_classes || p >= num_classes)
      throw LabelMismatch("class index outside the active taxonomy");
    ++r.confusion[t][p];
  }
  size_t trace = 0;
  for (size_t c = 0; c < num_classes; ++c) {
    size_t tp = r.confusion[c][c];
    size_t fn = 0, fp = 0;
    for (size_t j = 0; j < num_classes; ++j) {
      if (j != c) {
        fn += r.confusion[c][j];
        fp += r.confusion[j][c];
      }
    }
    trace += tp;
    ClassMetrics m;
    m.support = tp + fn;
    m.precision = (tp + fp) == 0 ? 0.0
                                 : static_cast<double>(tp) /
                                       static_cast<double>(tp + fp);
    m.recall = m.support == 0 ? 0.0
                              : static_cast<double>(tp) /
                                    static_cast<double>(m.support);
    m.f1 = (m.precision + m.recall) == 0.0
               ? 0.0
               : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    r.per_class.push_back(m);
  }
  r.accuracy = static_cast<double>(trace) / static_cast<double>(r.total);
  // Internal consistency: row sums are supports, accuracy is trace/total.
  for (size_t c = 0; c < num_classes; ++c) {
    size_t row = 0;
    for (size_t j = 0; j < num_classes; ++j) row += r.confusion[c][j];
    if (row != r.per_class[c].support)
      throw Error("confusion row sum does not match support");
  }
  return r;
}

inline std::string format_report_text(const EvalReport& r) {
  char buf[160];
  std::string out = "class       precision   recall      f1-score    support\n";
  for (size_t c = 0; c < r.per_class.size(); ++c) {
    const ClassMetrics& m = r.per_class[c];
    std::snprintf(buf, sizeof(buf), "%-12zu%-12.4f%-12.4f%-12.4f%zu\n", c,
                  m.precision, m.recall, m.f1, m.support);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "accuracy    %.4f on %zu samples (loss %.4f)\n",
                r.accuracy, r.total, r.loss);
  out += buf;
  out += "confusion matrix (rows = true, cols = predicted):\n";
  for (const auto& row : r.confusion) {
    for (size_t j = 0; j < row.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%8zu", row[j]);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

// ---- dataset plumbing ----

// Class index inside the active taxonomy: binary collapses every
// vulnerability class to 1.
inline int collapse_class(VulnClass c, size_t num_classes) {
  if (num_classes == 2) return c == VulnClass::kNormal ? 0 : 1;
  return static_cast<int>(c);
}

struct TokenizedContract {
  std::string address;
  std::vector<int32_t> ids;
  int label = 0;  // index in the active taxonomy
};

inline TokenizedContract tokenize_record(const ContractRecord& rec,
                                         const Vocabulary& vocab,
                                         size_t num_classes) {
  TokenizedContract t;
  t.address = rec.address;
  t.ids = vocab.encode(rec.hex_tokens());
  t.label = collapse_class(rec.vuln_class(), num_classes);
  return t;
}

struct TrainWindow {
  std::vector<int32_t> ids;  // padded to window_size
  int label = 0;             // inherited from the contract
};

struct EvalContract {
  std::string address;
  int label = 0;
  std::vector<Window> windows;
};

// Training operates on windows with labels inherited from their contract.
inline std::vector<TrainWindow> training_windows(
    const std::vector<TokenizedContract>& contracts, const WindowConfig& cfg) {
  std::vector<TrainWindow> out;
  for (const TokenizedContract& c : contracts) {
    WindowBatch batch = make_windows(c.ids, cfg, c.address);
    for (Window& w : batch.windows)
      out.push_back({std::move(w.ids), c.label});
  }
  return out;
}

inline std::vector<EvalContract> eval_contracts(
    const std::vector<TokenizedContract>& contracts, const WindowConfig& cfg) {
  std::vector<EvalContract> out;
  out.reserve(contracts.size());
  for (const TokenizedContract& c : contracts) {
    EvalContract e;
    e.address = c.address;
    e.label = c.label;
    e.windows = make_windows(c.ids, cfg, c.address).windows;
    out.push_back(std::move(e));
  }
  return out;
}

// ---- model dispatch ----

struct ModelSettings {
  ModelKind kind = ModelKind::kTransformer;
  TransformerConfig transformer;
  LstmConfig lstm;
  WindowConfig window;

  size_t num_classes() const {
    return kind == ModelKind::kTransformer ? transformer.num_classes
                                           : lstm.num_classes;
  }
  size_t vocab_size() const {
    return kind == ModelKind::kTransformer ? transformer.vocab_size
                                           : lstm.vocab_size;
  }
  void set_vocab_size(size_t v) {
    transformer.vocab_size = v;
    lstm.vocab_size = v;
  }
};

inline ModelParams init_params(const ModelSettings& s, uint64_t seed) {
  return s.kind == ModelKind::kTransformer
             ? init_transformer_params(s.transformer, seed)
             : init_lstm_params(s.lstm, seed);
}

inline ModelGraph build_model(Tape& tape, const ModelParams& params,
                              const ModelSettings& s,
                              const std::vector<int32_t>& ids, bool train) {
  return s.kind == ModelKind::kTransformer
             ? build_transformer(tape, params, s.transformer, ids, train)
             : build_lstm(tape, params, s.lstm, ids, train);
}

inline std::vector<double> model_forward(const ModelParams& params,
                                         const ModelSettings& s,
                                         const std::vector<int32_t>& ids) {
  Tape tape;
  return tape.value(build_model(tape, params, s, ids, false).probs).values();
}

// ---- training loop ----

struct EpochStats {
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  size_t total_steps = 0;
  bool has_val = false;
};

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

// Optional early-stop probe, called after each completed epoch.
using StopFn = std::function<bool(const TrainHistory&, const ModelParams&)>;

namespace detail {

struct WindowPass {
  std::vector<Tensor> grads;
  double loss = 0.0;
  bool correct = false;
};

inline WindowPass run_train_window(const ModelParams& params,
                                   const ModelSettings& s,
                                   const TrainWindow& w,
                                   uint64_t dropout_seed) {
  Tape tape(dropout_seed);
  ModelGraph g = build_model(tape, params, s, w.ids, /*train=*/true);
  NodeId loss = tape.ce_loss(g.probs, static_cast<size_t>(w.label));
  tape.backward(loss);
  WindowPass out;
  out.loss = tape.value(loss)[0];
  const Tensor& probs = tape.value(g.probs);
  size_t argmax = 0;
  for (size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[argmax]) argmax = i;
  out.correct = static_cast<int>(argmax) == w.label;
  out.grads.reserve(g.leaves.order.size());
  for (NodeId leaf : g.leaves.order) out.grads.push_back(tape.grad(leaf));
  return out;
}

inline std::pair<double, double> run_eval_windows(
    const ModelParams& params, const ModelSettings& s,
    const std::vector<TrainWindow>& windows, size_t threads) {
  if (windows.empty()) return {0.0, 0.0};
  std::vector<double> losses(windows.size());
  std::vector<uint8_t> correct(windows.size());
  parallel_for(windows.size(), threads, [&](size_t i) {
    Tape tape;
    ModelGraph g = build_model(tape, params, s, windows[i].ids, false);
    NodeId loss = tape.ce_loss(g.probs, static_cast<size_t>(windows[i].label));
    losses[i] = tape.value(loss)[0];
    const Tensor& probs = tape.value(g.probs);
    size_t argmax = 0;
    for (size_t j = 1; j < probs.size(); ++j)
      if (probs[j] > probs[argmax]) argmax = j;
    correct[i] = static_cast<int>(argmax) == windows[i].label;
  });
  double loss_sum = 0.0;
  size_t n_correct = 0;
  for (size_t i = 0; i < windows.size(); ++i) {
    loss_sum += losses[i];
    n_correct += correct[i];
  }
  return {loss_sum / static_cast<double>(windows.size()),
          static_cast<double>(n_correct) / static_cast<double>(windows.size())};
}

}  // namespace detail

// Mini-batch training with Adam and cross-entropy. Gradients of a batch are
// computed per window (possibly in parallel) and reduced in window order, so
// results are bitwise reproducible for a given seed regardless of thread
// count. Validation runs after each epoch with dropout disabled.
inline TrainResult train_model(const ModelSettings& settings,
                               const TrainConfig& cfg,
                               const std::vector<TrainWindow>& train_set,
                               const std::vector<TrainWindow>& val_set,
                               const StopFn& stop = {}) {
  cfg.validate();
  if (train_set.empty()) throw EmptyDataset("no training windows");
  size_t threads = cfg.threads == 0 ? default_threads() : cfg.threads;
  TrainResult result;
  result.params = init_params(settings, cfg.seed);
  AdamState state = AdamState::init(result.params);
  Rng shuffle_rng(cfg.seed ^ 0x5f0f5f0f5f0f5f0full);
  Rng dropout_rng(cfg.seed ^ 0xd40bd40bd40bd40bull);
  result.history.has_val = !val_set.empty();

  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  size_t n_params = result.params.named.size();
  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double epoch_loss = 0.0;
    size_t epoch_correct = 0;
    for (size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      size_t end = std::min(order.size(), begin + cfg.batch_size);
      size_t batch_n = end - begin;
      std::vector<uint64_t> seeds(batch_n);
      for (size_t i = 0; i < batch_n; ++i) seeds[i] = dropout_rng.next_u64();
      std::vector<detail::WindowPass> passes(batch_n);
      parallel_for(batch_n, threads, [&](size_t i) {
        passes[i] = detail::run_train_window(
            result.params, settings, train_set[order[begin + i]], seeds[i]);
      });
      std::vector<Tensor> batch_grads;
      batch_grads.reserve(n_params);
      for (const auto& [name, t] : result.params.named)
        batch_grads.emplace_back(t.shape());
      double inv = 1.0 / static_cast<double>(batch_n);
      for (size_t i = 0; i < batch_n; ++i) {
        for (size_t p = 0; p < n_params; ++p) {
          const Tensor& g = passes[i].grads[p];
          Tensor& acc = batch_grads[p];
          for (size_t j = 0; j < g.size(); ++j) acc[j] += g[j] * inv;
        }
        epoch_loss += passes[i].loss;
        epoch_correct += passes[i].correct ? 1 : 0;
      }
      adam_step(result.params, batch_grads, state, cfg);
      ++result.history.total_steps;
    }
    EpochStats es;
    es.train_loss = epoch_loss / static_cast<double>(train_set.size());
    es.train_acc = static_cast<double>(epoch_correct) /
                   static_cast<double>(train_set.size());
    if (!val_set.empty()) {
      auto [vl, va] =
          detail::run_eval_windows(result.params, settings, val_set, threads);
      es.val_loss = vl;
      es.val_acc = va;
    }
    result.history.epochs.push_back(es);
    if (stop && stop(result.history, result.params)) break;
  }
  return result;
}

// Contract-level evaluation: per-window forward, window aggregation, argmax.
// Loss is the mean cross-entropy of the aggregated probabilities.
inline EvalReport evaluate(const ModelParams& params,
                           const ModelSettings& settings,
                           const std::vector<EvalContract>& contracts,
                           size_t threads = 0) {
  if (contracts.empty()) throw EmptyDataset("no contracts to evaluate");
  if (threads == 0) threads = default_threads();
  std::vector<int> predicted(contracts.size());
  std::vector<int> truth(contracts.size());
  std::vector<double> losses(contracts.size());
  parallel_for(contracts.size(), threads, [&](size_t i) {
    const EvalContract& c = contracts[i];
    std::vector<std::vector<double>> per_window;
    per_window.reserve(c.windows.size());
    for (const Window& w : c.windows)
      per_window.push_back(model_forward(params, settings, w.ids));
    std::vector<double> probs = aggregate(per_window, settings.window);
    size_t argmax = 0;
    for (size_t j = 1; j < probs.size(); ++j)
      if (probs[j] > probs[argmax]) argmax = j;
    predicted[i] = static_cast<int>(argmax);
    truth[i] = c.label;
    double p = probs[static_cast<size_t>(c.label)];
    losses[i] = -std::log(std::max(p, 1e-12));
  });
  double loss = 0.0;
  for (double l : losses) loss += l;
  loss /= static_cast<double>(contracts.size());
  return make_report(truth, predicted, settings.num_classes(), loss);
}

struct CrossDatasetResult {
  ModelParams params;
  Vocabulary vocab;
  TrainHistory history;
  EvalReport report;
};

// Fits the vocabulary on the training file, trains on all of it (no split),
// evaluates on all of the test file.
inline CrossDatasetResult cross_dataset_run(
    const std::vector<ContractRecord>& train_records,
    const std::vector<ContractRecord>& test_records, ModelSettings settings,
    const TrainConfig& cfg, size_t vocab_capacity) {
  if (train_records.empty() || test_records.empty())
    throw EmptyDataset("cross-dataset run needs nonempty train and test sets");
  std::vector<std::vector<std::string>> token_lists;
  token_lists.reserve(train_records.size());
  for (const auto& r : train_records) token_lists.push_back(r.hex_tokens());
  CrossDatasetResult out;
  out.vocab = Vocabulary::fit(token_lists, vocab_capacity);
  settings.set_vocab_size(out.vocab.size());
  size_t classes = settings.num_classes();
  std::vector<TokenizedContract> train_tok, test_tok;
  for (const auto& r : train_records)
    train_tok.push_back(tokenize_record(r, out.vocab, classes));
  for (const auto& r : test_records)
    test_tok.push_back(tokenize_record(r, out.vocab, classes));
  TrainResult tr = train_model(settings, cfg,
                               training_windows(train_tok, settings.window),
                               /*val_set=*/{});
  out.params = std::move(tr.params);
  out.history = std::move(tr.history);
  out.report = evaluate(out.params, settings,
                        eval_contracts(test_tok, settings.window),
                        cfg.threads);
  return out;
}

// Line-oriented metrics log: one CSV row per epoch.
inline void write_history_csv(const TrainHistory& h, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open history file for write: " + path);
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  char buf[256];
  for (size_t i = 0; i < h.epochs.size(); ++i) {
    const EpochStats& e = h.epochs[i];
    if (h.has_val)
      std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g\n", i + 1,
                    e.train_loss, e.train_acc, e.val_loss, e.val_acc);
    else
      std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,,\n", i + 1,
                    e.train_loss, e.train_acc);
    out << buf;
  }
}

}  // namespace evmscan
