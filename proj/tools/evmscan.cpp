// evmscan: sequence-model vulnerability scanning for EVM bytecode
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: scan, train, eval, ingest, synth, disasm.
// Exit codes: 0 success/clean, 1 operational error, 2 vulnerability flagged.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "evmscan/checkpoint.hpp"
#include "evmscan/corpus.hpp"
#include "evmscan/disasm.hpp"
#include "evmscan/etherscan.hpp"
#include "evmscan/train.hpp"

namespace {

using namespace evmscan;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitVulnerable = 2;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// Shared model/window/training knobs. --config accepts key=value pairs for
// every tuned field; the dedicated flags are shorthands for the common ones.
struct SharedOptions {
  std::string model = "transformer";
  size_t classes = 2;
  size_t window_size = 2048;
  double overlap = 0.25;
  std::string agg = "max";
  size_t epochs = 50;
  uint64_t seed = 0;
  size_t threads = 0;
  size_t vocab_capacity = 1000;
  std::vector<std::string> config_pairs;

  ModelSettings settings;
  TrainConfig train_cfg;

  void add_flags(CLI::App* cmd, bool with_training) {
    cmd->add_option("--model", model, "transformer or lstm")
        ->check(CLI::IsMember({"transformer", "lstm"}));
    cmd->add_option("--classes", classes, "2 (binary) or 4 (taxonomy)")
        ->check(CLI::IsMember({"2", "4"}));
    cmd->add_option("--window-size", window_size, "window length in tokens");
    cmd->add_option("--overlap", overlap, "window overlap fraction");
    cmd->add_option("--agg", agg, "window aggregation")
        ->check(CLI::IsMember({"max", "mean"}));
    cmd->add_option("--seed", seed, "seed for all randomness");
    cmd->add_option("--threads", threads, "worker threads (0 = auto)");
    cmd->add_option("--config", config_pairs,
                    "key=value overrides (max_length, embedding_dim, "
                    "num_heads, head_size, ff_dim, dropout, hidden_size, "
                    "head_dim, batch_size, learning_rate, num_words)");
    if (with_training)
      cmd->add_option("--epochs", epochs, "training epochs");
  }

  void resolve() {
    settings.kind =
        model == "lstm" ? ModelKind::kLstm : ModelKind::kTransformer;
    settings.transformer.num_classes = classes;
    settings.lstm.num_classes = classes;
    settings.window.window_size = window_size;
    settings.window.overlap = overlap;
    settings.window.aggregation =
        agg == "mean" ? Aggregation::kMean : Aggregation::kMax;
    settings.transformer.max_length = window_size;
    settings.lstm.max_length = window_size;
    train_cfg.epochs = epochs;
    train_cfg.seed = seed;
    train_cfg.threads = threads;
    for (const std::string& pair : config_pairs) apply_config(pair);
    settings.window.validate();
  }

  void apply_config(const std::string& pair) {
    size_t eq = pair.find('=');
    if (eq == std::string::npos)
      throw Error("--config expects key=value, got '" + pair + "'");
    std::string key = pair.substr(0, eq);
    std::string value = pair.substr(eq + 1);
    auto as_size = [&]() { return static_cast<size_t>(std::stoull(value)); };
    auto as_double = [&]() { return std::stod(value); };
    if (key == "max_length") {
      settings.transformer.max_length = as_size();
      settings.lstm.max_length = as_size();
      settings.window.window_size = as_size();
    } else if (key == "embedding_dim") {
      settings.transformer.embedding_dim = as_size();
      settings.lstm.embedding_dim = as_size();
    } else if (key == "num_heads") {
      settings.transformer.num_heads = as_size();
    } else if (key == "head_size") {
      settings.transformer.head_size = as_size();
    } else if (key == "ff_dim") {
      settings.transformer.ff_dim = as_size();
    } else if (key == "dropout") {
      settings.transformer.dropout_rate = as_double();
      settings.lstm.dropout_rate = as_double();
    } else if (key == "hidden_size" || key == "head_dim") {
      settings.lstm.hidden_size = as_size();
    } else if (key == "batch_size") {
      train_cfg.batch_size = as_size();
    } else if (key == "learning_rate") {
      train_cfg.learning_rate = as_double();
    } else if (key == "num_words") {
      vocab_capacity = as_size();
    } else {
      throw Error("unknown --config key '" + key + "'");
    }
  }
};

json report_to_json(const EvalReport& r) {
  json per_class = json::array();
  for (size_t c = 0; c < r.per_class.size(); ++c) {
    per_class.push_back({{"class", c},
                         {"precision", r.per_class[c].precision},
                         {"recall", r.per_class[c].recall},
                         {"f1", r.per_class[c].f1},
                         {"support", r.per_class[c].support}});
  }
  return json{{"accuracy", r.accuracy},
              {"loss", r.loss},
              {"total", r.total},
              {"per_class", per_class},
              {"confusion", r.confusion}};
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open output file: " + path);
  out << text;
}

// ---- scan ----

struct ScanRow {
  std::string address;
  bool failed = false;
  std::string error;
  std::vector<double> probs;
  size_t predicted = 0;
  std::vector<std::pair<size_t, std::vector<double>>> windows;  // start, probs
};

const char* class_label_name(size_t cls, size_t num_classes) {
  if (num_classes == 2) return cls == 0 ? "normal" : "vulnerable";
  return vuln_class_name(static_cast<VulnClass>(cls));
}

ScanRow scan_one(const Checkpoint& ckpt, const std::string& address,
                 const std::vector<uint8_t>& bytes) {
  ScanRow row;
  row.address = address;
  Bytecode code;
  code.bytes = bytes;
  std::vector<int32_t> ids = ckpt.vocab.encode(to_hex_tokens(code));
  if (ids.empty()) {
    row.failed = true;
    row.error = "empty bytecode";
    return row;
  }
  WindowBatch batch = make_windows(ids, ckpt.settings.window, address);
  std::vector<std::vector<double>> per_window;
  per_window.reserve(batch.windows.size());
  for (const Window& w : batch.windows) {
    per_window.push_back(model_forward(ckpt.params, ckpt.settings, w.ids));
    row.windows.emplace_back(w.start, per_window.back());
  }
  row.probs = aggregate(per_window, ckpt.settings.window);
  for (size_t i = 1; i < row.probs.size(); ++i)
    if (row.probs[i] > row.probs[row.predicted]) row.predicted = i;
  return row;
}

int cmd_scan(const std::string& input, const std::string& checkpoint_path,
             bool force_csv, bool strict, const std::string& out_path,
             size_t threads) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  size_t num_classes = ckpt.settings.num_classes();

  struct Item {
    std::string address;
    std::vector<uint8_t> bytes;
    bool failed = false;
    std::string error;
  };
  std::vector<Item> items;
  bool is_csv = force_csv || (input.size() > 4 &&
                              input.substr(input.size() - 4) == ".csv");
  if (is_csv) {
    std::ifstream in(input, std::ios::binary);
    if (!in) throw Error("cannot open file: " + input);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      Item item;
      size_t c1 = line.find(',');
      size_t c2 = c1 == std::string::npos ? std::string::npos
                                          : line.find(',', c1 + 1);
      if (c1 == std::string::npos) {
        item.address = "line_" + std::to_string(line_no);
        item.failed = true;
        item.error = "not a dataset row";
        items.push_back(std::move(item));
        continue;
      }
      item.address = line.substr(0, c1);
      std::string tokens = c2 == std::string::npos
                               ? line.substr(c1 + 1)
                               : line.substr(c1 + 1, c2 - c1 - 1);
      try {
        item.bytes = parse_hex(tokens).bytes;
      } catch (const MalformedHex& e) {
        item.failed = true;
        item.error = e.what();
      }
      items.push_back(std::move(item));
    }
  } else {
    Item item;
    item.address = input;
    item.bytes = parse_hex(read_file(input)).bytes;
    items.push_back(std::move(item));
  }

  std::vector<ScanRow> rows(items.size());
  if (threads == 0) threads = default_threads();
  parallel_for(items.size(), threads, [&](size_t i) {
    if (items[i].failed) {
      rows[i].address = items[i].address;
      rows[i].failed = true;
      rows[i].error = items[i].error;
      return;
    }
    try {
      rows[i] = scan_one(ckpt, items[i].address, items[i].bytes);
    } catch (const Error& e) {
      rows[i].address = items[i].address;
      rows[i].failed = true;
      rows[i].error = e.what();
    }
  });

  std::string ckpt_id = checkpoint_path + " (" + model_kind_name(ckpt.settings.kind) +
                        ", " + std::to_string(ckpt.params.total_count()) +
                        " parameters)";
  size_t flagged = 0, errors = 0;
  json out_rows = json::array();
  for (const ScanRow& row : rows) {
    if (row.failed) {
      ++errors;
      std::printf("%s: ERROR %s\n", row.address.c_str(), row.error.c_str());
      out_rows.push_back({{"address", row.address}, {"error", row.error}});
      continue;
    }
    bool vulnerable = row.predicted != 0;
    flagged += vulnerable ? 1 : 0;
    std::printf("%s: %s", row.address.c_str(),
                class_label_name(row.predicted, num_classes));
    std::printf(" [");
    for (size_t i = 0; i < row.probs.size(); ++i)
      std::printf("%s%.4f", i ? " " : "", row.probs[i]);
    std::printf("]\n");
    json windows = json::array();
    for (const auto& [start, probs] : row.windows) {
      std::printf("  window @%zu:", start);
      for (double p : probs) std::printf(" %.4f", p);
      std::printf("\n");
      windows.push_back({{"start", start}, {"probs", probs}});
    }
    out_rows.push_back({{"address", row.address},
                        {"probs", row.probs},
                        {"predicted", row.predicted},
                        {"label", class_label_name(row.predicted, num_classes)},
                        {"windows", windows}});
  }
  std::printf("scanned %zu contract(s): %zu flagged, %zu error(s)\n",
              rows.size(), flagged, errors);
  if (!out_path.empty()) {
    json doc{{"checkpoint", ckpt_id},
             {"reports", out_rows},
             {"flagged", flagged},
             {"errors", errors}};
    write_text_file(out_path, doc.dump(2) + "\n");
  }
  if (strict && errors > 0) return kExitError;
  return flagged > 0 ? kExitVulnerable : kExitOk;
}

// ---- train ----

int cmd_train(const std::string& csv_path, SharedOptions& opt,
              const std::string& out_dir, bool skip_bad) {
  opt.resolve();
  CsvStats csv_stats;
  std::vector<ContractRecord> records = load_csv(csv_path, skip_bad, &csv_stats);
  if (records.empty()) throw EmptyDataset("dataset file has no usable rows");
  size_t num_classes = opt.classes;
  bool seen[4] = {false, false, false, false};
  for (const ContractRecord& r : records)
    seen[collapse_class(r.vuln_class(), num_classes)] = true;
  size_t distinct = 0;
  for (bool s : seen) distinct += s ? 1 : 0;
  if (distinct < 2)
    throw DatasetDegenerate("dataset holds a single class; nothing to learn");

  Split<ContractRecord> parts = split(records, SplitSpec{}, opt.seed);
  std::printf("split: train=%zu val=%zu test=%zu\n", parts.train.size(),
              parts.val.size(), parts.test.size());

  std::vector<std::vector<std::string>> token_lists;
  token_lists.reserve(parts.train.size());
  for (const ContractRecord& r : parts.train)
    token_lists.push_back(r.hex_tokens());
  Vocabulary vocab = Vocabulary::fit(token_lists, opt.vocab_capacity);
  opt.settings.set_vocab_size(vocab.size());
  std::printf("vocabulary: %zu tokens (capacity %zu)\n", vocab.size(),
              opt.vocab_capacity);

  auto tokenize_all = [&](const std::vector<ContractRecord>& rs) {
    std::vector<TokenizedContract> out;
    out.reserve(rs.size());
    for (const ContractRecord& r : rs)
      out.push_back(tokenize_record(r, vocab, num_classes));
    return out;
  };
  std::vector<TokenizedContract> train_tok = tokenize_all(parts.train);
  std::vector<TokenizedContract> val_tok = tokenize_all(parts.val);
  std::vector<TokenizedContract> test_tok = tokenize_all(parts.test);

  TrainResult result = train_model(
      opt.settings, opt.train_cfg, training_windows(train_tok, opt.settings.window),
      training_windows(val_tok, opt.settings.window));
  for (size_t e = 0; e < result.history.epochs.size(); ++e) {
    const EpochStats& es = result.history.epochs[e];
    std::printf("epoch %zu: train_loss=%.4f train_acc=%.4f", e + 1,
                es.train_loss, es.train_acc);
    if (result.history.has_val)
      std::printf(" val_loss=%.4f val_acc=%.4f", es.val_loss, es.val_acc);
    std::printf("\n");
  }

  std::filesystem::create_directories(out_dir);
  Checkpoint ckpt;
  ckpt.settings = opt.settings;
  ckpt.vocab = vocab;
  ckpt.params = std::move(result.params);
  save_checkpoint(out_dir + "/model.ckpt", ckpt);
  vocab.save(out_dir + "/vocab.tsv");
  write_history_csv(result.history, out_dir + "/history.csv");

  if (!test_tok.empty()) {
    EvalReport report =
        evaluate(ckpt.params, opt.settings,
                 eval_contracts(test_tok, opt.settings.window),
                 opt.train_cfg.threads);
    std::printf("%s", format_report_text(report).c_str());
    write_text_file(out_dir + "/report.json",
                    report_to_json(report).dump(2) + "\n");
  } else {
    std::printf("test partition is empty; skipping final evaluation\n");
  }
  std::printf("wrote %s/model.ckpt, vocab.tsv, history.csv\n", out_dir.c_str());
  return kExitOk;
}

// ---- eval ----

int cmd_eval(const std::string& csv_path, const std::string& checkpoint_path,
             SharedOptions& opt, const std::string& out_path, bool skip_bad,
             bool classes_given) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  if (classes_given && opt.classes != ckpt.settings.num_classes())
    throw LabelMismatch("checkpoint expects " +
                        std::to_string(ckpt.settings.num_classes()) +
                        " classes, --classes asked for " +
                        std::to_string(opt.classes));
  std::vector<ContractRecord> records = load_csv(csv_path, skip_bad);
  if (records.empty()) throw EmptyDataset("dataset file has no usable rows");
  std::vector<TokenizedContract> tokenized;
  tokenized.reserve(records.size());
  for (const ContractRecord& r : records)
    tokenized.push_back(
        tokenize_record(r, ckpt.vocab, ckpt.settings.num_classes()));
  EvalReport report = evaluate(ckpt.params, ckpt.settings,
                               eval_contracts(tokenized, ckpt.settings.window),
                               opt.threads);
  std::printf("%s", format_report_text(report).c_str());
  if (!out_path.empty())
    write_text_file(out_path, report_to_json(report).dump(2) + "\n");
  return kExitOk;
}

// ---- ingest ----

int cmd_ingest(const std::string& address_file, const std::string& out_csv,
               const std::string& api_url, const std::string& api_key,
               const std::string& source_dir, size_t max_attempts,
               size_t backoff_ms, bool heuristic_labels) {
  if (api_key.empty())
    throw Error("no API key: pass --api-key or set ETHERSCAN_API_KEY");
  std::ifstream in(address_file, std::ios::binary);
  if (!in) throw Error("cannot open address file: " + address_file);
  std::vector<std::string> addresses;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    size_t comma = line.find(',');
    if (comma != std::string::npos) line = line.substr(0, comma);
    if (line.empty() || line[0] == '#') continue;
    addresses.push_back(line);
  }
  if (addresses.empty()) throw EmptyDataset("address file has no addresses");

  EtherscanClient::Options copts;
  copts.base_url = api_url;
  copts.max_attempts = max_attempts;
  copts.backoff_initial_ms = backoff_ms;
  copts.source_dir = source_dir;
  if (!source_dir.empty()) std::filesystem::create_directories(source_dir);
  EtherscanClient client(api_key, copts);

  std::vector<ContractRecord> records;
  size_t skipped = 0;
  for (const std::string& address : addresses) {
    FetchOutcome outcome = client.fetch_verified(address);
    if (outcome.status == FetchOutcome::Status::kSkipped) {
      ++skipped;
      std::printf("%s: skipped (%s)\n", address.c_str(),
                  outcome.skip_reason.c_str());
      continue;
    }
    ContractRecord r = std::move(outcome.record);
    if (heuristic_labels)
      r.set_class(heuristic_label(r));
    else
      r.set_class(VulnClass::kNormal);
    std::printf("%s: %zu bytes -> %s\n", address.c_str(), r.code_bytes.size(),
                vuln_class_name(r.vuln_class()));
    records.push_back(std::move(r));
  }
  write_csv(records, out_csv);
  std::printf("ingested %zu contract(s), skipped %zu, wrote %s\n",
              records.size(), skipped, out_csv.c_str());
  return kExitOk;
}

// ---- synth / disasm ----

int cmd_synth(size_t n, uint64_t seed, const std::string& out_csv,
              size_t classes, size_t min_tokens, size_t max_tokens,
              size_t marker_period) {
  SynthConfig cfg;
  cfg.four_class = classes == 4;
  cfg.min_tokens = min_tokens;
  cfg.max_tokens = max_tokens;
  cfg.call_marker_period = marker_period;
  std::vector<ContractRecord> records = synthesize_corpus(n, cfg, seed);
  write_csv(records, out_csv);
  DatasetStats s = stats(records, 256);
  std::printf("wrote %zu records to %s (normal=%zu suicidal=%zu prodigal=%zu "
              "greedy=%zu, mean length %.1f)\n",
              records.size(), out_csv.c_str(), s.class_counts[0],
              s.class_counts[1], s.class_counts[2], s.class_counts[3],
              s.mean_length);
  return kExitOk;
}

int cmd_disasm(const std::string& hex_file, const std::string& out_path) {
  Bytecode code = parse_hex(read_file(hex_file));
  std::string listing = format_listing(disassemble(code));
  if (out_path.empty())
    std::fputs(listing.c_str(), stdout);
  else
    write_text_file(out_path, listing);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EVM bytecode vulnerability scanning toolkit"};
  app.require_subcommand(1);

  // scan
  auto* scan = app.add_subcommand("scan", "classify contracts with a trained model");
  std::string scan_input, scan_ckpt, scan_out;
  bool scan_csv = false, scan_strict = false;
  size_t scan_threads = 0;
  scan->add_option("input", scan_input, "hex file or dataset CSV")->required();
  scan->add_option("--checkpoint", scan_ckpt, "trained checkpoint")->required();
  scan->add_flag("--csv", scan_csv, "force dataset-CSV input parsing");
  scan->add_flag("--strict", scan_strict, "exit 1 when any row fails to parse");
  scan->add_option("--out", scan_out, "write a JSON report here");
  scan->add_option("--threads", scan_threads, "worker threads (0 = auto)");

  // train
  auto* train = app.add_subcommand("train", "train a model on a dataset CSV");
  std::string train_csv, train_out = "run";
  bool train_skip_bad = false;
  SharedOptions train_opt;
  train->add_option("dataset", train_csv, "dataset CSV")->required();
  train->add_option("--out", train_out, "output directory");
  train->add_flag("--skip-bad", train_skip_bad, "skip malformed rows");
  train_opt.add_flags(train, true);

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset CSV");
  std::string eval_csv, eval_ckpt, eval_out;
  bool eval_skip_bad = false;
  SharedOptions eval_opt;
  eval->add_option("dataset", eval_csv, "dataset CSV")->required();
  eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
  eval->add_option("--out", eval_out, "write a JSON report here");
  eval->add_flag("--skip-bad", eval_skip_bad, "skip malformed rows");
  auto* eval_classes =
      eval->add_option("--classes", eval_opt.classes, "expected taxonomy")
          ->check(CLI::IsMember({"2", "4"}));
  eval->add_option("--threads", eval_opt.threads, "worker threads (0 = auto)");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "fetch verified contracts via the API");
  std::string ingest_addrs, ingest_out = "ingested.csv";
  std::string ingest_url = "https://api.etherscan.io";
  std::string ingest_key, ingest_sources = "sources";
  size_t ingest_attempts = 3, ingest_backoff = 250;
  bool ingest_no_heuristic = false;
  ingest->add_option("addresses", ingest_addrs,
                     "file with one contract address per line")->required();
  ingest->add_option("--out", ingest_out, "output dataset CSV");
  ingest->add_option("--api-url", ingest_url, "API endpoint base URL");
  ingest->add_option("--api-key", ingest_key,
                     "API key (or env ETHERSCAN_API_KEY)");
  ingest->add_option("--source-dir", ingest_sources,
                     "directory for fetched .sol files (empty: skip saving)");
  ingest->add_option("--max-attempts", ingest_attempts, "retry attempts");
  ingest->add_option("--backoff-ms", ingest_backoff, "initial retry backoff");
  ingest->add_flag("--no-heuristic-labels", ingest_no_heuristic,
                   "label everything normal instead of the rule cascade");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a labeled synthetic corpus");
  size_t synth_n = 100;
  uint64_t synth_seed = 0;
  std::string synth_out = "synthetic.csv";
  size_t synth_classes = 2, synth_min = 200, synth_max = 3000, synth_period = 24;
  synth->add_option("count", synth_n, "number of contracts")->required();
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "output dataset CSV");
  synth->add_option("--classes", synth_classes, "2 or 4")
      ->check(CLI::IsMember({"2", "4"}));
  synth->add_option("--min-tokens", synth_min, "minimum contract length");
  synth->add_option("--max-tokens", synth_max, "maximum contract length");
  synth->add_option("--marker-period", synth_period,
                    "instructions between guarded CALLs in normal contracts");

  // disasm
  auto* disasm_cmd = app.add_subcommand("disasm", "disassemble a hex file");
  std::string disasm_in, disasm_out;
  disasm_cmd->add_option("input", disasm_in, "hex file")->required();
  disasm_cmd->add_option("--out", disasm_out, "write the listing here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*scan)
      return cmd_scan(scan_input, scan_ckpt, scan_csv, scan_strict, scan_out,
                      scan_threads);
    if (*train) return cmd_train(train_csv, train_opt, train_out, train_skip_bad);
    if (*eval)
      return cmd_eval(eval_csv, eval_ckpt, eval_opt, eval_out, eval_skip_bad,
                      eval_classes->count() > 0);
    if (*ingest) {
      std::string key = ingest_key;
      if (key.empty()) {
        const char* env = std::getenv("ETHERSCAN_API_KEY");
        if (env) key = env;
      }
      return cmd_ingest(ingest_addrs, ingest_out, ingest_url, key,
                        ingest_sources, ingest_attempts, ingest_backoff,
                        !ingest_no_heuristic);
    }
    if (*synth)
      return cmd_synth(synth_n, synth_seed, synth_out, synth_classes,
                       synth_min, synth_max, synth_period);
    if (*disasm_cmd) return cmd_disasm(disasm_in, disasm_out);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  }
  return kExitOk;
}
