// evmscan: sequence-model vulnerability scanning for EVM bytecode
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "evmscan/errors.hpp"

namespace evmscan {

constexpr int32_t kPadId = 0;
constexpr int32_t kOovId = 1;
inline const char* kPadToken = "<PAD>";
inline const char* kOovToken = "<OOV>";

// Token -> id mapping fitted on a training corpus. Ids 0 and 1 are reserved
// for padding and out-of-vocabulary tokens; real tokens get contiguous ids
// from 2, ranked by descending corpus frequency with lexicographic tie-break
// so fits are reproducible.
class Vocabulary {
 public:
  Vocabulary() {
    id_to_token_ = {kPadToken, kOovToken};
    capacity_ = 2;
  }

  static Vocabulary fit(const std::vector<std::vector<std::string>>& corpus,
                        size_t capacity) {
    if (capacity < 2)
      throw InvalidCapacity("vocabulary capacity must be at least 2, got " +
                            std::to_string(capacity));
    std::map<std::string, uint64_t> freq;
    for (const auto& tokens : corpus)
      for (const auto& t : tokens) ++freq[t];
    std::vector<std::pair<std::string, uint64_t>> ranked(freq.begin(),
                                                         freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    Vocabulary v;
    v.capacity_ = capacity;
    size_t keep = std::min(ranked.size(), capacity - 2);
    for (size_t i = 0; i < keep; ++i) {
      v.token_to_id_.emplace(ranked[i].first,
                             static_cast<int32_t>(v.id_to_token_.size()));
      v.id_to_token_.push_back(ranked[i].first);
    }
    return v;
  }

  size_t size() const { return id_to_token_.size(); }
  size_t capacity() const { return capacity_; }

  int32_t id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kOovId : it->second;
  }

  std::vector<int32_t> encode(const std::vector<std::string>& tokens) const {
    std::vector<int32_t> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id_of(t));
    return ids;
  }

  std::vector<std::string> decode(const std::vector<int32_t>& ids) const {
    std::vector<std::string> tokens;
    tokens.reserve(ids.size());
    for (int32_t id : ids) {
      if (id < 0 || static_cast<size_t>(id) >= id_to_token_.size())
        throw UnknownId("id " + std::to_string(id) +
                        " outside vocabulary of size " +
                        std::to_string(id_to_token_.size()));
      tokens.push_back(id_to_token_[static_cast<size_t>(id)]);
    }
    return tokens;
  }

  const std::vector<std::string>& tokens_by_id() const { return id_to_token_; }

  // Line-oriented "token<TAB>id" sorted by id, reserved entries included.
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open vocabulary file for write: " + path);
    for (size_t id = 0; id < id_to_token_.size(); ++id)
      out << id_to_token_[id] << '\t' << id << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open vocabulary file: " + path);
    Vocabulary v;
    v.id_to_token_.clear();
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      size_t tab = line.find('\t');
      if (tab == std::string::npos)
        throw RowError("vocabulary line missing tab separator", line_no);
      std::string token = line.substr(0, tab);
      long id = std::stol(line.substr(tab + 1));
      if (id != static_cast<long>(v.id_to_token_.size()))
        throw RowError("vocabulary ids must be contiguous from 0", line_no);
      v.id_to_token_.push_back(token);
    }
    if (v.id_to_token_.size() < 2 || v.id_to_token_[0] != kPadToken ||
        v.id_to_token_[1] != kOovToken)
      throw Error("vocabulary file missing reserved <PAD>/<OOV> entries");
    for (size_t id = 2; id < v.id_to_token_.size(); ++id) {
      auto [it, inserted] =
          v.token_to_id_.emplace(v.id_to_token_[id], static_cast<int32_t>(id));
      if (!inserted)
        throw Error("vocabulary file maps token '" + v.id_to_token_[id] +
                    "' to more than one id");
    }
    v.capacity_ = v.id_to_token_.size();
    return v;
  }

  // Rebuilds from an id-ordered token list (e.g. a checkpoint's vocabulary
  // section); validates the reserved entries and bijectivity.
  static Vocabulary from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < 2 || tokens[0] != kPadToken || tokens[1] != kOovToken)
      throw Error("vocabulary token list missing reserved <PAD>/<OOV>");
    Vocabulary v;
    v.id_to_token_ = std::move(tokens);
    for (size_t id = 2; id < v.id_to_token_.size(); ++id) {
      auto [it, inserted] =
          v.token_to_id_.emplace(v.id_to_token_[id], static_cast<int32_t>(id));
      if (!inserted)
        throw Error("duplicate vocabulary token '" + v.id_to_token_[id] + "'");
    }
    v.capacity_ = v.id_to_token_.size();
    return v;
  }

  bool operator==(const Vocabulary& other) const {
    return id_to_token_ == other.id_to_token_;
  }

 private:
  std::unordered_map<std::string, int32_t> token_to_id_;
  std::vector<std::string> id_to_token_;
  size_t capacity_ = 2;
};

}  // namespace evmscan
