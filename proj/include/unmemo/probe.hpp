#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "unmemo/corpus.hpp"
#include "unmemo/model.hpp"

namespace unmemo {

enum class DecodeMode { kGreedy, kTemperature };

const char* to_string(DecodeMode mode);

/// Autoregressive continuation of `prefix`. Greedy picks the arg-max (lowest
/// id on ties); temperature mode samples softmax(logits / T). Stops after
/// `max_new` tokens, at <eos> (not emitted), or when the context is full.
std::vector<TokenId> generate(const Model& model, std::span<const TokenId> prefix, int max_new, DecodeMode mode,
                              double temperature = 1.0, std::uint64_t seed = 0);

/// Number of consecutive greedy tokens after seq[start, start + prefix_len)
/// that reproduce the original continuation.
int greedy_match_length(const Model& model, std::span<const TokenId> seq, int start, int prefix_len);

struct ProbeProtocol {
  std::vector<int> offsets{0, 10, 20, 30, 40};
  std::vector<int> prefix_lengths{4, 6, 8, 10};
  bool greedy = true;
  bool temperature_mode = true;
  double temperature = 0.6;
  int samples_per_temp = 3;
  std::string prompt_prefix;
  int max_new_tokens = 0;  // 0: the article's remaining length
  std::uint64_t seed = 0;

  void validate() const;
};

/// Every even length in [lo, hi].
std::vector<int> even_lengths(int lo, int hi);

struct ProbeRow {
  int offset = 0;
  int prefix_len = 0;
  DecodeMode mode = DecodeMode::kGreedy;
  int sample = 0;
  std::string generated;
  int suffix_words = 0;
  int generated_words = 0;
  int lcs = 0;
  int lcs_contiguous = 0;
  int edit_distance = 0;
  double rouge2_f1 = 0.0;
  double rouge2_recall = 0.0;
};

struct SkippedCombination {
  int offset = 0;
  int prefix_len = 0;
};

struct ProbeResult {
  std::string article_id;
  std::vector<ProbeRow> rows;
  std::vector<SkippedCombination> skipped;
  int best_lcs = 0;             // max
  int best_lcs_contiguous = 0;  // max
  int best_ed = 0;              // min
  double best_rouge2 = 0.0;     // max f1
  double best_lcs_ratio = 0.0;  // max lcs / suffix_words
  double best_ed_ratio = 0.0;   // min edit_distance / suffix_words

  /// Recomputes the best-case fields from `rows`.
  void aggregate();
};

/// Prefix-sweep memorization probe on a framed article (<bos> ... <eos>).
/// Offsets index article tokens; each prefix is fed as <bos> [prompt] window.
ProbeResult probe_sweep(const Model& model, const Vocab& vocab, const TokenSequence& article,
                        const ProbeProtocol& protocol, std::string article_id = {});

/// One CSV row per combination.
void write_probe_csv(const std::filesystem::path& path, std::span<const ProbeResult> results);

}  // namespace unmemo
