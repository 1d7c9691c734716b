// evmscan: sequence-model vulnerability scanning for EVM bytecode
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "evmscan/model.hpp"
#include "evmscan/train.hpp"
#include "evmscan/vocab.hpp"

namespace evmscan {

// Checkpoint container, binary little-endian:
//
//   magic "EVSC", format version u32
//   model kind u8, num_classes u32, vocab_size u32, max_length u32,
//   embedding_dim u32, num_heads u32, head_size u32, ff_dim u32,
//   hidden_size u32, dropout f64, window_size u32, overlap f64,
//   aggregation u8
//   vocabulary: u32 entry count, then (u16 length, bytes) per token in id
//     order
//   tensors: u32 count, then per tensor (u16 name length, name bytes,
//     u8 rank, u64 dims[rank], f64 row-major values)
//
// The loader rebuilds the expected tensor layout from the stored config and
// rejects files whose names, shapes or counts do not match it.
struct Checkpoint {
  ModelSettings settings;
  Vocabulary vocab;
  ModelParams params;
};

namespace detail {

inline void put_bytes(std::ofstream& out, const void* p, size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void put_u8(std::ofstream& out, uint8_t x) { put_bytes(out, &x, 1); }

inline void put_u16(std::ofstream& out, uint16_t x) {
  uint8_t b[2] = {uint8_t(x & 0xff), uint8_t(x >> 8)};
  put_bytes(out, b, 2);
}

inline void put_u32(std::ofstream& out, uint32_t x) {
  uint8_t b[4];
  for (int i = 0; i < 4; ++i) b[i] = uint8_t(x >> (8 * i));
  put_bytes(out, b, 4);
}

inline void put_u64(std::ofstream& out, uint64_t x) {
  uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = uint8_t(x >> (8 * i));
  put_bytes(out, b, 8);
}

inline void put_f64(std::ofstream& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

inline void need(std::ifstream& in, void* p, size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(in.gcount()) != n)
    throw CheckpointError("checkpoint file truncated");
}

inline uint8_t get_u8(std::ifstream& in) {
  uint8_t x;
  need(in, &x, 1);
  return x;
}

inline uint16_t get_u16(std::ifstream& in) {
  uint8_t b[2];
  need(in, b, 2);
  return uint16_t(b[0] | (uint16_t(b[1]) << 8));
}

inline uint32_t get_u32(std::ifstream& in) {
  uint8_t b[4];
  need(in, b, 4);
  uint32_t x = 0;
  for (int i = 0; i < 4; ++i) x |= uint32_t(b[i]) << (8 * i);
  return x;
}

inline uint64_t get_u64(std::ifstream& in) {
  uint8_t b[8];
  need(in, b, 8);
  uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= uint64_t(b[i]) << (8 * i);
  return x;
}

inline double get_f64(std::ifstream& in) {
  uint64_t bits = get_u64(in);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

constexpr uint32_t kCheckpointVersion = 1;
inline const char kCheckpointMagic[4] = {'E', 'V', 'S', 'C'};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open checkpoint for write: " + path);
  using namespace detail;
  put_bytes(out, kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  const ModelSettings& s = ckpt.settings;
  put_u8(out, s.kind == ModelKind::kTransformer ? 0 : 1);
  put_u32(out, static_cast<uint32_t>(s.num_classes()));
  put_u32(out, static_cast<uint32_t>(s.vocab_size()));
  put_u32(out, static_cast<uint32_t>(s.transformer.max_length));
  put_u32(out, static_cast<uint32_t>(s.transformer.embedding_dim));
  put_u32(out, static_cast<uint32_t>(s.transformer.num_heads));
  put_u32(out, static_cast<uint32_t>(s.transformer.head_size));
  put_u32(out, static_cast<uint32_t>(s.transformer.ff_dim));
  put_u32(out, static_cast<uint32_t>(s.lstm.hidden_size));
  put_f64(out, s.kind == ModelKind::kTransformer ? s.transformer.dropout_rate
                                                 : s.lstm.dropout_rate);
  put_u32(out, static_cast<uint32_t>(s.window.window_size));
  put_f64(out, s.window.overlap);
  put_u8(out, s.window.aggregation == Aggregation::kMax ? 0 : 1);
  const auto& tokens = ckpt.vocab.tokens_by_id();
  put_u32(out, static_cast<uint32_t>(tokens.size()));
  for (const std::string& t : tokens) {
    put_u16(out, static_cast<uint16_t>(t.size()));
    put_bytes(out, t.data(), t.size());
  }
  put_u32(out, static_cast<uint32_t>(ckpt.params.named.size()));
  for (const auto& [name, tensor] : ckpt.params.named) {
    put_u16(out, static_cast<uint16_t>(name.size()));
    put_bytes(out, name.data(), name.size());
    put_u8(out, static_cast<uint8_t>(tensor.rank()));
    for (size_t d : tensor.shape()) put_u64(out, d);
    for (size_t i = 0; i < tensor.size(); ++i) put_f64(out, tensor[i]);
  }
  if (!out) throw CheckpointError("write failed for checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  using namespace detail;
  char magic[4];
  need(in, magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw CheckpointError("not a checkpoint file: " + path);
  uint32_t version = get_u32(in);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  Checkpoint ckpt;
  ModelSettings& s = ckpt.settings;
  s.kind = get_u8(in) == 0 ? ModelKind::kTransformer : ModelKind::kLstm;
  uint32_t num_classes = get_u32(in);
  uint32_t vocab_size = get_u32(in);
  uint32_t max_length = get_u32(in);
  s.transformer.embedding_dim = get_u32(in);
  s.transformer.num_heads = get_u32(in);
  s.transformer.head_size = get_u32(in);
  s.transformer.ff_dim = get_u32(in);
  s.lstm.hidden_size = get_u32(in);
  double dropout = get_f64(in);
  s.window.window_size = get_u32(in);
  s.window.overlap = get_f64(in);
  s.window.aggregation = get_u8(in) == 0 ? Aggregation::kMax : Aggregation::kMean;
  s.transformer.max_length = max_length;
  s.lstm.max_length = max_length;
  s.lstm.embedding_dim = s.transformer.embedding_dim;
  s.transformer.num_classes = num_classes;
  s.lstm.num_classes = num_classes;
  s.transformer.dropout_rate = dropout;
  s.lstm.dropout_rate = dropout;
  s.set_vocab_size(vocab_size);

  uint32_t n_tokens = get_u32(in);
  std::vector<std::string> tokens;
  tokens.reserve(n_tokens);
  for (uint32_t i = 0; i < n_tokens; ++i) {
    uint16_t len = get_u16(in);
    std::string t(len, '\0');
    if (len) need(in, t.data(), len);
    tokens.push_back(std::move(t));
  }
  ckpt.vocab = Vocabulary::from_tokens(std::move(tokens));
  if (ckpt.vocab.size() != vocab_size)
    throw CheckpointError("vocabulary size does not match config");

  uint32_t n_tensors = get_u32(in);
  for (uint32_t i = 0; i < n_tensors; ++i) {
    uint16_t len = get_u16(in);
    std::string name(len, '\0');
    if (len) need(in, name.data(), len);
    uint8_t rank = get_u8(in);
    std::vector<size_t> shape(rank);
    for (uint8_t r = 0; r < rank; ++r)
      shape[r] = static_cast<size_t>(get_u64(in));
    Tensor t(shape);
    for (size_t j = 0; j < t.size(); ++j) t[j] = get_f64(in);
    ckpt.params.named.emplace_back(std::move(name), std::move(t));
  }

  // Validate names/shapes/counts against the layout this config implies.
  ModelParams expected = init_params(s, 0);
  if (!ckpt.params.same_layout(expected))
    throw CheckpointError(
        "checkpoint tensors do not match the layout implied by its config");
  return ckpt;
}

}  // namespace evmscan
