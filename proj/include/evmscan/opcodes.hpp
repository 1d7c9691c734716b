// evmscan: sequence-model vulnerability scanning for EVM bytecode
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>

namespace evmscan {

// Instruction table snapshot: London fork (143 assigned opcodes). Unassigned
// bytes have a null mnemonic here and disassemble as INVALID. See README for
// the fork note; newer forks add opcodes (PUSH0 etc.) that are not listed.
struct OpcodeInfo {
  const char* mnemonic;   // nullptr when the byte is unassigned
  uint8_t immediate_len;  // nonzero only for PUSH1..PUSH32
};

namespace detail {

inline const std::array<OpcodeInfo, 256>& opcode_table() {
  static const std::array<OpcodeInfo, 256> table = [] {
    std::array<OpcodeInfo, 256> t{};
    for (auto& e : t) e = {nullptr, 0};
    auto set = [&](uint8_t op, const char* name) { t[op] = {name, 0}; };
    set(0x00, "STOP");
    set(0x01, "ADD");
    set(0x02, "MUL");
    set(0x03, "SUB");
    set(0x04, "DIV");
    set(0x05, "SDIV");
    set(0x06, "MOD");
    set(0x07, "SMOD");
    set(0x08, "ADDMOD");
    set(0x09, "MULMOD");
    set(0x0a, "EXP");
    set(0x0b, "SIGNEXTEND");
    set(0x10, "LT");
    set(0x11, "GT");
    set(0x12, "SLT");
    set(0x13, "SGT");
    set(0x14, "EQ");
    set(0x15, "ISZERO");
    set(0x16, "AND");
    set(0x17, "OR");
    set(0x18, "XOR");
    set(0x19, "NOT");
    set(0x1a, "BYTE");
    set(0x1b, "SHL");
    set(0x1c, "SHR");
    set(0x1d, "SAR");
    set(0x20, "KECCAK256");
    set(0x30, "ADDRESS");
    set(0x31, "BALANCE");
    set(0x32, "ORIGIN");
    set(0x33, "CALLER");
    set(0x34, "CALLVALUE");
    set(0x35, "CALLDATALOAD");
    set(0x36, "CALLDATASIZE");
    set(0x37, "CALLDATACOPY");
    set(0x38, "CODESIZE");
    set(0x39, "CODECOPY");
    set(0x3a, "GASPRICE");
    set(0x3b, "EXTCODESIZE");
    set(0x3c, "EXTCODECOPY");
    set(0x3d, "RETURNDATASIZE");
    set(0x3e, "RETURNDATACOPY");
    set(0x3f, "EXTCODEHASH");
    set(0x40, "BLOCKHASH");
    set(0x41, "COINBASE");
    set(0x42, "TIMESTAMP");
    set(0x43, "NUMBER");
    set(0x44, "DIFFICULTY");
    set(0x45, "GASLIMIT");
    set(0x46, "CHAINID");
    set(0x47, "SELFBALANCE");
    set(0x48, "BASEFEE");
    set(0x50, "POP");
    set(0x51, "MLOAD");
    set(0x52, "MSTORE");
    set(0x53, "MSTORE8");
    set(0x54, "SLOAD");
    set(0x55, "SSTORE");
    set(0x56, "JUMP");
    set(0x57, "JUMPI");
    set(0x58, "PC");
    set(0x59, "MSIZE");
    set(0x5a, "GAS");
    set(0x5b, "JUMPDEST");
    static const char* push_names[32] = {
        "PUSH1",  "PUSH2",  "PUSH3",  "PUSH4",  "PUSH5",  "PUSH6",  "PUSH7",
        "PUSH8",  "PUSH9",  "PUSH10", "PUSH11", "PUSH12", "PUSH13", "PUSH14",
        "PUSH15", "PUSH16", "PUSH17", "PUSH18", "PUSH19", "PUSH20", "PUSH21",
        "PUSH22", "PUSH23", "PUSH24", "PUSH25", "PUSH26", "PUSH27", "PUSH28",
        "PUSH29", "PUSH30", "PUSH31", "PUSH32"};
    static const char* dup_names[16] = {
        "DUP1",  "DUP2",  "DUP3",  "DUP4",  "DUP5",  "DUP6",  "DUP7",  "DUP8",
        "DUP9",  "DUP10", "DUP11", "DUP12", "DUP13", "DUP14", "DUP15", "DUP16"};
    static const char* swap_names[16] = {
        "SWAP1",  "SWAP2",  "SWAP3",  "SWAP4",  "SWAP5",  "SWAP6",
        "SWAP7",  "SWAP8",  "SWAP9",  "SWAP10", "SWAP11", "SWAP12",
        "SWAP13", "SWAP14", "SWAP15", "SWAP16"};
    static const char* log_names[5] = {"LOG0", "LOG1", "LOG2", "LOG3", "LOG4"};
    for (int i = 0; i < 32; ++i)
      t[0x60 + i] = {push_names[i], static_cast<uint8_t>(i + 1)};
    for (int i = 0; i < 16; ++i) t[0x80 + i] = {dup_names[i], 0};
    for (int i = 0; i < 16; ++i) t[0x90 + i] = {swap_names[i], 0};
    for (int i = 0; i < 5; ++i) t[0xa0 + i] = {log_names[i], 0};
    set(0xf0, "CREATE");
    set(0xf1, "CALL");
    set(0xf2, "CALLCODE");
    set(0xf3, "RETURN");
    set(0xf4, "DELEGATECALL");
    set(0xf5, "CREATE2");
    set(0xfa, "STATICCALL");
    set(0xfd, "REVERT");
    set(0xfe, "INVALID");
    set(0xff, "SELFDESTRUCT");
    return t;
  }();
  return table;
}

}  // namespace detail

// Info for an assigned opcode byte, nullptr otherwise.
inline const OpcodeInfo* opcode_info(uint8_t op) {
  const OpcodeInfo& e = detail::opcode_table()[op];
  return e.mnemonic == nullptr ? nullptr : &e;
}

// The instruction table as byte -> mnemonic; unassigned bytes are absent.
inline std::map<uint8_t, std::string> mnemonic_table() {
  std::map<uint8_t, std::string> out;
  for (int b = 0; b < 256; ++b) {
    if (const OpcodeInfo* info = opcode_info(static_cast<uint8_t>(b)))
      out.emplace(static_cast<uint8_t>(b), info->mnemonic);
  }
  return out;
}

// Opcode bytes the heuristic labeler and corpus generator care about.
namespace op {
constexpr uint8_t kEq = 0x14;
constexpr uint8_t kCaller = 0x33;
constexpr uint8_t kCallValue = 0x34;
constexpr uint8_t kPop = 0x50;
constexpr uint8_t kMstore = 0x52;
constexpr uint8_t kPush1 = 0x60;
constexpr uint8_t kCall = 0xf1;
constexpr uint8_t kDelegateCall = 0xf4;
constexpr uint8_t kSelfDestruct = 0xff;
}  // namespace op

}  // namespace evmscan
