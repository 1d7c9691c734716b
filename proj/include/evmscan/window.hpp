// evmscan: sequence-model vulnerability scanning for EVM bytecode
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "evmscan/errors.hpp"
#include "evmscan/vocab.hpp"

namespace evmscan {

enum class Aggregation { kMax = 0, kMean = 1 };

inline const char* aggregation_name(Aggregation a) {
  return a == Aggregation::kMax ? "max" : "mean";
}

struct WindowConfig {
  size_t window_size = 2048;
  double overlap = 0.25;
  Aggregation aggregation = Aggregation::kMax;

  size_t stride() const {
    auto s = static_cast<size_t>(
        static_cast<double>(window_size) * (1.0 - overlap));
    return s == 0 ? 1 : s;
  }

  void validate() const {
    if (window_size < 1) throw Error("window_size must be at least 1");
    if (overlap < 0.0 || overlap >= 1.0)
      throw Error("overlap must be in [0, 1)");
  }
};

struct Window {
  size_t start = 0;
  std::vector<int32_t> ids;    // padded to window_size with PAD=0
  std::vector<uint8_t> mask;   // 1 for real tokens, 0 for padding
};

struct WindowBatch {
  std::string address;
  std::vector<Window> windows;
};

// Splits ids into overlapping windows on the stride grid. Window m starts at
// m * stride; the last window is the first one reaching the end of the
// sequence and is PAD-filled at the tail. Sequences no longer than one
// window produce exactly one window.
inline WindowBatch make_windows(const std::vector<int32_t>& ids,
                                const WindowConfig& cfg,
                                std::string address = {}) {
  cfg.validate();
  if (ids.empty()) throw EmptyContract("cannot window an empty id sequence");
  size_t w = cfg.window_size;
  size_t stride = cfg.stride();
  WindowBatch batch;
  batch.address = std::move(address);
  size_t start = 0;
  while (true) {
    Window win;
    win.start = start;
    win.ids.assign(w, kPadId);
    win.mask.assign(w, 0);
    size_t take = std::min(w, ids.size() - start);
    for (size_t i = 0; i < take; ++i) {
      win.ids[i] = ids[start + i];
      win.mask[i] = 1;
    }
    batch.windows.push_back(std::move(win));
    if (start + w >= ids.size()) break;
    start += stride;
  }
  return batch;
}

// Reduces per-window class probability vectors to one contract-level vector.
// Binary vectors aggregate the class-1 ("vulnerable") probability and derive
// class 0 as its complement; wider vectors aggregate per class, and the MAX
// strategy renormalizes the result to sum to one.
inline std::vector<double> aggregate(
    const std::vector<std::vector<double>>& per_window,
    const WindowConfig& cfg) {
  if (per_window.empty())
    throw EmptyBatch("cannot aggregate an empty window batch");
  size_t c = per_window[0].size();
  for (const auto& p : per_window)
    if (p.size() != c)
      throw ShapeError("inconsistent class counts across windows");
  if (c == 2) {
    double v;
    if (cfg.aggregation == Aggregation::kMax) {
      v = 0.0;
      for (const auto& p : per_window) v = std::max(v, p[1]);
    } else {
      v = 0.0;
      for (const auto& p : per_window) v += p[1];
      v /= static_cast<double>(per_window.size());
    }
    return {1.0 - v, v};
  }
  std::vector<double> out(c, 0.0);
  if (cfg.aggregation == Aggregation::kMax) {
    for (const auto& p : per_window)
      for (size_t i = 0; i < c; ++i) out[i] = std::max(out[i], p[i]);
    double sum = 0.0;
    for (double x : out) sum += x;
    if (sum > 0.0)
      for (double& x : out) x /= sum;
    return out;
  }
  for (const auto& p : per_window)
    for (size_t i = 0; i < c; ++i) out[i] += p[i];
  for (double& x : out) x /= static_cast<double>(per_window.size());
  return out;
}

// Scalar convenience for the binary case: aggregates class-1 probabilities.
inline double aggregate_binary(const std::vector<double>& vuln_probs,
                               const WindowConfig& cfg) {
  std::vector<std::vector<double>> vecs;
  vecs.reserve(vuln_probs.size());
  for (double p : vuln_probs) vecs.push_back({1.0 - p, p});
  return aggregate(vecs, cfg)[1];
}

}  // namespace evmscan
