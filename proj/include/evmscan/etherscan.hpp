// evmscan: sequence-model vulnerability scanning for EVM bytecode
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdio>
#include <string>
#include <thread>

#ifdef EVMSCAN_HAS_OPENSSL
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#endif
#include "httplib.h"
#include "json.hpp"

#include "evmscan/corpus.hpp"
#include "evmscan/disasm.hpp"
#include "evmscan/errors.hpp"

namespace evmscan {

struct FetchOutcome {
  enum class Status { kFetched, kSkipped };
  Status status = Status::kSkipped;
  ContractRecord record;          // unlabeled (all label bits zero)
  std::string saved_source_path;  // empty when sources are not persisted
  std::string skip_reason;
};

// Minimal verified-source fetcher. One request in flight; transport failures
// and HTTP 5xx retry with exponential backoff up to max_attempts; rate
// limiting surfaces to the caller as RateLimited. Sources persist atomically
// (write temp, then rename) as ContractAddress_ContractName.sol.
class EtherscanClient {
 public:
  struct Options {
    std::string base_url = "https://api.etherscan.io";
    std::string api_path = "/api";
    size_t max_attempts = 3;
    size_t backoff_initial_ms = 250;
    std::string source_dir;  // empty: do not persist sources
  };

  explicit EtherscanClient(std::string api_key)
      : EtherscanClient(std::move(api_key), Options()) {}

  EtherscanClient(std::string api_key, Options options)
      : api_key_(std::move(api_key)), options_(std::move(options)) {
    if (api_key_.empty()) throw Error("API key must be nonempty");
  }

  FetchOutcome fetch_verified(const std::string& address) {
    std::string body = get_with_retries(address);
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw ApiFormatError(std::string("response is not valid JSON: ") +
                           e.what());
    }
    std::string status = str_field(doc, "status");
    if (status == "0") {
      std::string result = doc.contains("result") && doc["result"].is_string()
                               ? doc["result"].get<std::string>()
                               : "";
      if (to_lower(result).find("rate limit") != std::string::npos)
        throw RateLimited("API rate limit reached: " + result);
      throw ApiFormatError("API returned status 0: " + result);
    }
    if (!doc.contains("result") || !doc["result"].is_array() ||
        doc["result"].empty())
      throw ApiFormatError("response has no result entries");
    const nlohmann::json& entry = doc["result"][0];
    std::string source = str_field(entry, "sourceCode", "SourceCode");
    std::string name = str_field(entry, "contractName", "ContractName");
    std::string bytecode = str_field(entry, "bytecode", "Bytecode");

    if (count_occurrences(source, ".sol") > 1) {
      FetchOutcome out;
      out.status = FetchOutcome::Status::kSkipped;
      out.skip_reason = "sourceCode holds more than one .sol file";
      return out;
    }

    FetchOutcome out;
    out.status = FetchOutcome::Status::kFetched;
    out.record.address = address;
    out.record.source = "etherscan";
    try {
      out.record.code_bytes = parse_hex(bytecode).bytes;
    } catch (const MalformedHex& e) {
      throw ApiFormatError("bytecode field is not hex: " +
                           std::string(e.what()));
    }
    if (!options_.source_dir.empty())
      out.saved_source_path = persist_source(address, name, source);
    return out;
  }

 private:
  static std::string str_field(const nlohmann::json& j, const char* key,
                               const char* alt = nullptr) {
    if (j.contains(key) && j[key].is_string()) return j[key].get<std::string>();
    if (alt && j.contains(alt) && j[alt].is_string())
      return j[alt].get<std::string>();
    return "";
  }

  static size_t count_occurrences(const std::string& hay,
                                  const std::string& needle) {
    size_t n = 0, pos = 0;
    while ((pos = hay.find(needle, pos)) != std::string::npos) {
      ++n;
      pos += needle.size();
    }
    return n;
  }

  std::string get_with_retries(const std::string& address) {
    std::string target = options_.api_path +
                         "?module=contract&action=getsourcecode&address=" +
                         address + "&apikey=" + api_key_;
    size_t backoff = options_.backoff_initial_ms;
    std::string last_error;
    for (size_t attempt = 0; attempt < options_.max_attempts; ++attempt) {
      if (attempt > 0 && backoff > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
        backoff *= 2;
      }
      httplib::Client client(options_.base_url);
      client.set_connection_timeout(10);
      client.set_read_timeout(30);
      httplib::Result res = client.Get(target);
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429)
        throw RateLimited("HTTP 429 from API endpoint");
      if (res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200)
        throw NetworkError("HTTP " + std::to_string(res->status) +
                           " from API endpoint");
      return res->body;
    }
    throw NetworkError("request failed after " +
                       std::to_string(options_.max_attempts) +
                       " attempts; last error: " + last_error);
  }

  static std::string sanitize(const std::string& s) {
    std::string out;
    for (char c : s) {
      bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                (c >= '0' && c <= '9') || c == '_' || c == '-';
      out.push_back(ok ? c : '_');
    }
    return out.empty() ? std::string("Contract") : out;
  }

  std::string persist_source(const std::string& address,
                             const std::string& name,
                             const std::string& source) const {
    std::string path = options_.source_dir + "/" + sanitize(address) + "_" +
                       sanitize(name) + ".sol";
    std::string tmp = path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw Error("cannot write source file: " + tmp);
      out << source;
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
      throw Error("cannot move source file into place: " + path);
    return path;
  }

  std::string api_key_;
  Options options_;
};

}  // namespace evmscan
