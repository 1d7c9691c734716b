// evmscan: sequence-model vulnerability scanning for EVM bytecode
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "evmscan/errors.hpp"
#include "evmscan/opcodes.hpp"

namespace evmscan {

struct Bytecode {
  std::vector<uint8_t> bytes;
  std::string source_hex;  // normalized original, may be empty
};

struct Instruction {
  size_t offset = 0;
  uint8_t opcode_byte = 0;
  std::string_view mnemonic;     // points into the static opcode table
  std::vector<uint8_t> immediate;  // nonempty only for PUSH1..PUSH32
  bool truncated = false;        // immediate ran past end of code, zero-padded
};

struct OpcodeSequence {
  std::vector<Instruction> instructions;
  size_t code_length = 0;
};

namespace detail {

inline int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  return -1;
}

}  // namespace detail

// Decodes hex text into bytes. Accepts an optional 0x prefix and interior
// whitespace; normalizes to lowercase before decoding.
inline Bytecode parse_hex(std::string_view text) {
  std::string digits;
  digits.reserve(text.size());
  size_t start = 0;
  if (text.size() >= 2 && text[0] == '0' && (text[1] == 'x' || text[1] == 'X'))
    start = 2;
  for (size_t i = start; i < text.size(); ++i) {
    char c = text[i];
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' ||
        c == '\f')
      continue;
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    digits.push_back(c);
  }
  for (size_t i = 0; i < digits.size(); ++i) {
    if (detail::hex_digit(digits[i]) < 0)
      throw MalformedHex("non-hex character '" + std::string(1, digits[i]) +
                             "' at digit index " + std::to_string(i),
                         i);
  }
  if (digits.size() % 2 != 0)
    throw MalformedHex("odd number of hex digits (" +
                           std::to_string(digits.size()) + ")",
                       digits.size());
  Bytecode code;
  code.source_hex = digits;
  code.bytes.reserve(digits.size() / 2);
  for (size_t i = 0; i < digits.size(); i += 2) {
    code.bytes.push_back(static_cast<uint8_t>(
        detail::hex_digit(digits[i]) * 16 + detail::hex_digit(digits[i + 1])));
  }
  return code;
}

// Total on all inputs: unknown bytes become INVALID, a PUSH whose immediate
// runs past the end of code is zero-padded and flagged truncated.
inline OpcodeSequence disassemble(const Bytecode& code) {
  OpcodeSequence seq;
  seq.code_length = code.bytes.size();
  size_t pos = 0;
  while (pos < code.bytes.size()) {
    Instruction ins;
    ins.offset = pos;
    ins.opcode_byte = code.bytes[pos];
    const OpcodeInfo* info = opcode_info(ins.opcode_byte);
    ins.mnemonic = info ? info->mnemonic : "INVALID";
    size_t imm_len = info ? info->immediate_len : 0;
    ++pos;
    if (imm_len > 0) {
      ins.immediate.assign(imm_len, 0);
      size_t avail = code.bytes.size() - pos;
      size_t take = imm_len < avail ? imm_len : avail;
      for (size_t i = 0; i < take; ++i) ins.immediate[i] = code.bytes[pos + i];
      if (take < imm_len) ins.truncated = true;
      pos += take;
    }
    seq.instructions.push_back(std::move(ins));
  }
  return seq;
}

// One lowercase two-hex-digit token per byte; the models' feature stream.
inline std::vector<std::string> to_hex_tokens(const Bytecode& code) {
  static const char* digits = "0123456789abcdef";
  std::vector<std::string> tokens;
  tokens.reserve(code.bytes.size());
  for (uint8_t b : code.bytes) {
    std::string t(2, '0');
    t[0] = digits[b >> 4];
    t[1] = digits[b & 0x0f];
    tokens.push_back(std::move(t));
  }
  return tokens;
}

inline std::string byte_to_token(uint8_t b) {
  static const char* digits = "0123456789abcdef";
  std::string t(2, '0');
  t[0] = digits[b >> 4];
  t[1] = digits[b & 0x0f];
  return t;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

// "OFFSET(hex): MNEMONIC [0xIMMEDIATE]", one instruction per line.
inline std::string format_instruction(const Instruction& ins) {
  char head[32];
  std::snprintf(head, sizeof(head), "%04zx: ", ins.offset);
  std::string line = head;
  line += ins.mnemonic;
  if (!ins.immediate.empty()) {
    line += " 0x";
    for (uint8_t b : ins.immediate) line += byte_to_token(b);
  }
  if (ins.truncated) line += " (truncated)";
  return line;
}

inline std::string format_listing(const OpcodeSequence& seq) {
  std::string out;
  for (const Instruction& ins : seq.instructions) {
    out += format_instruction(ins);
    out.push_back('\n');
  }
  return out;
}

}  // namespace evmscan
