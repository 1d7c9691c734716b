// evmscan: sequence-model vulnerability scanning for EVM bytecode
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "evmscan/disasm.hpp"
#include "evmscan/errors.hpp"
#include "evmscan/util.hpp"

namespace evmscan {

// Label taxonomy, in one-hot bit order.
enum class VulnClass : int { kNormal = 0, kSuicidal = 1, kProdigal = 2, kGreedy = 3 };

constexpr size_t kNumVulnClasses = 4;

inline const char* vuln_class_name(VulnClass c) {
  switch (c) {
    case VulnClass::kNormal: return "normal";
    case VulnClass::kSuicidal: return "suicidal";
    case VulnClass::kProdigal: return "prodigal";
    case VulnClass::kGreedy: return "greedy";
  }
  return "?";
}

// One-hot label over (normal, suicidal, prodigal, greedy).
struct VulnLabel {
  VulnClass cls = VulnClass::kNormal;

  // Strict: the text must be exactly four space-separated bits, one-hot.
  static VulnLabel parse(const std::string& text) {
    std::array<uint8_t, 4> bits = parse_bits(text);
    int ones = bits[0] + bits[1] + bits[2] + bits[3];
    if (ones != 1)
      throw MalformedLabel("label '" + text + "' is not one-hot");
    for (int i = 0; i < 4; ++i)
      if (bits[i]) return VulnLabel{static_cast<VulnClass>(i)};
    throw MalformedLabel("unreachable");
  }

  // Lenient bit parse used at ingestion; multi-flag rows are representable
  // so they can be excluded later rather than rejected at the door.
  static std::array<uint8_t, 4> parse_bits(const std::string& text) {
    std::array<uint8_t, 4> bits{};
    size_t field = 0, i = 0;
    while (i < text.size() && field < 4) {
      if (text[i] != '0' && text[i] != '1')
        throw MalformedLabel("label '" + text + "' has a non-bit field");
      bits[field++] = static_cast<uint8_t>(text[i] - '0');
      ++i;
      if (field < 4) {
        if (i >= text.size() || text[i] != ' ')
          throw MalformedLabel("label '" + text +
                               "' must be four space-separated bits");
        ++i;
      }
    }
    if (field != 4 || i != text.size())
      throw MalformedLabel("label '" + text +
                           "' must be exactly four space-separated bits");
    return bits;
  }

  std::string render() const {
    std::string out = "0 0 0 0";
    out[static_cast<size_t>(static_cast<int>(cls)) * 2] = '1';
    return out;
  }
};

inline std::string render_bits(const std::array<uint8_t, 4>& bits) {
  std::string out;
  for (int i = 0; i < 4; ++i) {
    if (i) out.push_back(' ');
    out.push_back(static_cast<char>('0' + bits[i]));
  }
  return out;
}

struct ContractRecord {
  std::string address;
  std::vector<uint8_t> code_bytes;     // one byte per hex token
  std::array<uint8_t, 4> label_bits{}; // may be non-one-hot at ingestion
  std::string source;                  // provenance note, not serialized

  bool one_hot() const {
    return label_bits[0] + label_bits[1] + label_bits[2] + label_bits[3] == 1;
  }

  VulnClass vuln_class() const {
    if (!one_hot())
      throw MalformedLabel("record " + address + " label is not one-hot");
    for (int i = 0; i < 4; ++i)
      if (label_bits[i]) return static_cast<VulnClass>(i);
    throw MalformedLabel("unreachable");
  }

  void set_class(VulnClass c) {
    label_bits = {};
    label_bits[static_cast<size_t>(static_cast<int>(c))] = 1;
  }

  std::vector<std::string> hex_tokens() const {
    std::vector<std::string> tokens;
    tokens.reserve(code_bytes.size());
    for (uint8_t b : code_bytes) tokens.push_back(byte_to_token(b));
    return tokens;
  }
};

namespace detail {

inline bool valid_address(const std::string& a) {
  if (a.size() < 3 || a[0] != '0' || a[1] != 'x') return false;
  for (size_t i = 2; i < a.size(); ++i)
    if (hex_digit(a[i]) < 0 && !(a[i] >= 'A' && a[i] <= 'F')) return false;
  return true;
}

inline std::vector<uint8_t> parse_token_column(const std::string& col,
                                               size_t line_no) {
  std::vector<uint8_t> bytes;
  if (col.empty()) return bytes;
  size_t i = 0;
  while (i < col.size()) {
    if (i + 1 >= col.size())
      throw RowError("token column has a dangling character", line_no);
    int hi = hex_digit(col[i]), lo = hex_digit(col[i + 1]);
    if (hi < 0 || lo < 0)
      throw RowError("token column has a non-hex token at position " +
                         std::to_string(i),
                     line_no);
    bytes.push_back(static_cast<uint8_t>(hi * 16 + lo));
    i += 2;
    if (i < col.size()) {
      if (col[i] != ' ')
        throw RowError("tokens must be separated by single spaces", line_no);
      ++i;
    }
  }
  return bytes;
}

}  // namespace detail

// Dataset CSV: three comma-separated columns per row -- address,
// space-separated lowercase hex tokens, label bits "b b b b". UTF-8,
// newline-terminated, no header by default.
inline void write_csv(const std::vector<ContractRecord>& records,
                      const std::string& path, bool header = false) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open dataset file for write: " + path);
  if (header) out << "address,opcode,label\n";
  for (const ContractRecord& r : records) {
    out << r.address << ',';
    for (size_t i = 0; i < r.code_bytes.size(); ++i) {
      if (i) out << ' ';
      out << byte_to_token(r.code_bytes[i]);
    }
    out << ',' << render_bits(r.label_bits) << '\n';
  }
}

struct CsvStats {
  size_t rows = 0;
  size_t skipped = 0;
};

inline std::vector<ContractRecord> load_csv(const std::string& path,
                                            bool skip_malformed = false,
                                            CsvStats* stats = nullptr,
                                            bool header = false) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset file: " + path);
  std::vector<ContractRecord> records;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (header && line_no == 1) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      size_t c1 = line.find(',');
      size_t c2 = c1 == std::string::npos ? std::string::npos
                                          : line.find(',', c1 + 1);
      if (c1 == std::string::npos || c2 == std::string::npos)
        throw RowError("row needs three comma-separated columns", line_no);
      if (line.find(',', c2 + 1) != std::string::npos)
        throw RowError("row has more than three columns", line_no);
      ContractRecord r;
      r.address = line.substr(0, c1);
      if (!detail::valid_address(r.address))
        throw RowError("address '" + r.address + "' is not 0x-prefixed hex",
                       line_no);
      r.code_bytes =
          detail::parse_token_column(line.substr(c1 + 1, c2 - c1 - 1), line_no);
      try {
        r.label_bits = VulnLabel::parse_bits(line.substr(c2 + 1));
      } catch (const MalformedLabel& e) {
        throw RowError(e.what(), line_no);
      }
      records.push_back(std::move(r));
      if (stats) ++stats->rows;
    } catch (const RowError&) {
      if (!skip_malformed) throw;
      if (stats) ++stats->skipped;
    }
  }
  return records;
}

// Keeps the first occurrence keyed by the exact token stream.
inline std::vector<ContractRecord> dedup(
    const std::vector<ContractRecord>& records) {
  std::unordered_set<std::string> seen;
  std::vector<ContractRecord> out;
  out.reserve(records.size());
  for (const ContractRecord& r : records) {
    std::string key(reinterpret_cast<const char*>(r.code_bytes.data()),
                    r.code_bytes.size());
    if (seen.insert(std::move(key)).second) out.push_back(r);
  }
  return out;
}

struct BalancePolicy {
  size_t per_class_cap = SIZE_MAX;
  uint64_t seed = 0;
  bool drop_non_one_hot = true;  // e.g. rows flagged both suicidal and greedy
};

// Drops excluded rows, then samples each class down to the cap with the
// policy seed. Classes smaller than the cap are kept whole. Surviving
// records keep their original relative order.
inline std::vector<ContractRecord> filter_and_balance(
    const std::vector<ContractRecord>& records, const BalancePolicy& policy) {
  std::vector<size_t> kept;
  std::array<std::vector<size_t>, kNumVulnClasses> by_class;
  for (size_t i = 0; i < records.size(); ++i) {
    if (!records[i].one_hot()) {
      if (policy.drop_non_one_hot) continue;
      kept.push_back(i);
      continue;
    }
    by_class[static_cast<size_t>(static_cast<int>(records[i].vuln_class()))]
        .push_back(i);
  }
  Rng rng(policy.seed);
  for (auto& indices : by_class) {
    if (indices.size() > policy.per_class_cap) {
      shuffle(indices, rng);
      indices.resize(policy.per_class_cap);
    }
    kept.insert(kept.end(), indices.begin(), indices.end());
  }
  std::sort(kept.begin(), kept.end());
  std::vector<ContractRecord> out;
  out.reserve(kept.size());
  for (size_t i : kept) out.push_back(records[i]);
  return out;
}

struct DatasetStats {
  std::array<size_t, kNumVulnClasses> class_counts{};
  size_t non_one_hot = 0;
  size_t total = 0;
  size_t bin_width = 0;
  std::vector<size_t> length_histogram;  // bin i covers [i*w, (i+1)*w)
  double mean_length = 0.0;
};

inline DatasetStats stats(const std::vector<ContractRecord>& records,
                          size_t bin_width) {
  if (bin_width < 1) throw Error("bin_width must be at least 1");
  DatasetStats s;
  s.bin_width = bin_width;
  s.total = records.size();
  double sum = 0.0;
  for (const ContractRecord& r : records) {
    if (r.one_hot())
      ++s.class_counts[static_cast<size_t>(static_cast<int>(r.vuln_class()))];
    else
      ++s.non_one_hot;
    size_t len = r.code_bytes.size();
    sum += static_cast<double>(len);
    size_t bin = len / bin_width;
    if (bin >= s.length_histogram.size()) s.length_histogram.resize(bin + 1, 0);
    ++s.length_histogram[bin];
  }
  s.mean_length = records.empty() ? 0.0 : sum / double(records.size());
  return s;
}

// Syntactic stand-in for trace analysis. Scans the instruction stream once:
//
//   suicidal: SELFDESTRUCT reachable with no completed caller check
//             (a CALLER followed later by an EQ) anywhere before it
//   prodigal: CALL with a nonzero-immediate PUSH among the 7 instructions
//             before it (CALL pops 7 stack arguments) and no completed
//             caller check before it
//   greedy:   CALLVALUE present but no CALL / DELEGATECALL / SELFDESTRUCT
//             anywhere
//
// Deliberately conservative; a cheap labeler for synthetic ground truth and
// smoke-labeling, much weaker than symbolic analysis.
inline VulnClass heuristic_label(const OpcodeSequence& seq) {
  bool seen_caller = false;
  bool caller_check = false;
  bool suicidal = false, prodigal = false;
  bool has_callvalue = false, has_release = false;
  const auto& ins = seq.instructions;
  for (size_t i = 0; i < ins.size(); ++i) {
    uint8_t b = ins[i].opcode_byte;
    if (b == op::kSelfDestruct) {
      has_release = true;
      if (!caller_check) suicidal = true;
    } else if (b == op::kCall || b == op::kDelegateCall) {
      has_release = true;
      if (b == op::kCall && !caller_check) {
        size_t lo = i >= 7 ? i - 7 : 0;
        for (size_t j = lo; j < i; ++j) {
          if (ins[j].immediate.empty()) continue;
          for (uint8_t imm : ins[j].immediate)
            if (imm != 0) {
              prodigal = true;
              break;
            }
          if (prodigal) break;
        }
      }
    } else if (b == op::kCallValue) {
      has_callvalue = true;
    } else if (b == op::kCaller) {
      seen_caller = true;
    } else if (b == op::kEq && seen_caller) {
      caller_check = true;
    }
  }
  if (suicidal) return VulnClass::kSuicidal;
  if (prodigal) return VulnClass::kProdigal;
  if (has_callvalue && !has_release) return VulnClass::kGreedy;
  return VulnClass::kNormal;
}

inline VulnClass heuristic_label(const ContractRecord& record) {
  Bytecode code;
  code.bytes = record.code_bytes;
  return heuristic_label(disassemble(code));
}

struct SynthConfig {
  bool four_class = false;       // false: normal/greedy only
  size_t min_tokens = 200;
  size_t max_tokens = 3000;
  size_t call_marker_period = 24;  // instructions between guarded CALLs in
                                   // normal contracts
};

namespace detail {

// Background alphabet avoids every byte the labeling rules react to, both as
// opcodes and inside immediates, so planted motifs are the only occurrences.
inline const std::vector<uint8_t>& synth_opcode_pool() {
  static const std::vector<uint8_t> pool = {
      0x01, 0x02, 0x03, 0x04, 0x15, 0x16, 0x17, 0x19, 0x50, 0x51,
      0x52, 0x54, 0x55, 0x56, 0x57, 0x5b, 0x80, 0x81, 0x82, 0x90,
      0x91, 0x60, 0x60, 0x60, 0x61, 0x61, 0x63, 0x73};
  return pool;
}

inline uint8_t synth_immediate_byte(Rng& rng) {
  static const std::vector<uint8_t> allowed = [] {
    std::vector<uint8_t> v;
    for (int b = 0; b < 256; ++b) {
      if (b == op::kCaller || b == op::kCallValue || b == op::kCall ||
          b == op::kDelegateCall || b == op::kSelfDestruct)
        continue;
      v.push_back(static_cast<uint8_t>(b));
    }
    return v;
  }();
  return allowed[rng.next_below(allowed.size())];
}

inline void synth_emit_instruction(std::vector<uint8_t>& bytes, Rng& rng) {
  const auto& pool = synth_opcode_pool();
  uint8_t opc = pool[rng.next_below(pool.size())];
  bytes.push_back(opc);
  const OpcodeInfo* info = opcode_info(opc);
  for (size_t i = 0; i < info->immediate_len; ++i)
    bytes.push_back(synth_immediate_byte(rng));
}

}  // namespace detail

// Generates a deterministic, class-balanced labeled corpus. Each contract is
// a realistic prologue plus a random instruction stream; vulnerable classes
// get their defining motif planted at a uniformly random instruction
// boundary, normal contracts instead carry an early caller check and
// periodic zero-value CALLs.
inline std::vector<ContractRecord> synthesize_corpus(size_t n,
                                                     const SynthConfig& cfg,
                                                     uint64_t seed) {
  if (n < 2) throw Error("synthetic corpus needs at least 2 records");
  if (cfg.min_tokens < 16 || cfg.max_tokens < cfg.min_tokens)
    throw Error("bad synthetic length range");
  std::vector<VulnClass> classes = {VulnClass::kNormal, VulnClass::kGreedy};
  if (cfg.four_class)
    classes = {VulnClass::kNormal, VulnClass::kSuicidal, VulnClass::kProdigal,
               VulnClass::kGreedy};
  Rng rng(seed);
  std::vector<ContractRecord> out;
  out.reserve(n);
  static const char* hexd = "0123456789abcdef";
  for (size_t idx = 0; idx < n; ++idx) {
    VulnClass cls = classes[idx % classes.size()];
    ContractRecord rec;
    rec.address = "0x";
    for (int i = 0; i < 40; ++i) rec.address.push_back(hexd[rng.next_below(16)]);
    rec.source = "synthetic";
    rec.set_class(cls);

    size_t target =
        cfg.min_tokens + rng.next_below(cfg.max_tokens - cfg.min_tokens + 1);
    std::vector<uint8_t>& bytes = rec.code_bytes;
    bytes = {0x60, 0x80, 0x60, 0x40, 0x52};  // PUSH1 80 PUSH1 40 MSTORE

    if (cls == VulnClass::kNormal) {
      // Early caller check guards every CALL that follows.
      bytes.push_back(op::kCaller);
      bytes.push_back(op::kPush1);
      bytes.push_back(detail::synth_immediate_byte(rng));
      bytes.push_back(op::kEq);
      size_t since_marker = 0;
      while (bytes.size() < target) {
        if (since_marker >= cfg.call_marker_period) {
          bytes.push_back(op::kPush1);
          bytes.push_back(0x00);
          bytes.push_back(op::kCall);
          since_marker = 0;
          continue;
        }
        detail::synth_emit_instruction(bytes, rng);
        ++since_marker;
      }
    } else {
      // Instruction start offsets, so the motif lands on a boundary.
      std::vector<size_t> boundaries;
      while (bytes.size() < target) {
        boundaries.push_back(bytes.size());
        detail::synth_emit_instruction(bytes, rng);
      }
      boundaries.push_back(bytes.size());
      std::vector<uint8_t> motif;
      switch (cls) {
        case VulnClass::kSuicidal:
          motif = {op::kPush1, 0x00, op::kSelfDestruct};
          break;
        case VulnClass::kProdigal:
          motif = {op::kPush1, 0x01, op::kCall};
          break;
        case VulnClass::kGreedy:
          motif = {op::kCallValue, op::kPop};
          break;
        default:
          break;
      }
      size_t at = boundaries[rng.next_below(boundaries.size())];
      bytes.insert(bytes.begin() + static_cast<long>(at), motif.begin(),
                   motif.end());
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace evmscan
