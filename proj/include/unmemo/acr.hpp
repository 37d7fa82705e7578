#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "unmemo/model.hpp"

namespace unmemo {

struct AcrConfig {
  int max_prefix_len = 8;
  int iters_per_len = 10;
  int candidates_per_position = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AcrLengthLog {
  int length = 0;
  int iterations = 0;
  double best_loss = 0.0;  // mean target NLL of the best prefix at this length
  int matched_tokens = 0;  // teacher-forced arg-max agreement with the target
  bool elicited = false;
};

struct AcrResult {
  std::optional<std::vector<TokenId>> best_prefix;
  bool elicited = false;
  double acr = 0.0;  // target_len / prefix_len when elicited, else 0
  int target_len = 0;
  std::vector<AcrLengthLog> log;

  /// Compression below one token out per token in counts as failure.
  bool failure() const { return acr < 1.0; }
};

/// Searches, for m = 1..max_prefix_len, for an m-token prompt that makes
/// greedy decoding emit `target` exactly. Within a length the search is a
/// gradient-shortlisted coordinate descent; lengths are tried in order so
/// the first success is the shortest found.
AcrResult compress(const Model& model, std::span<const TokenId> target, const AcrConfig& cfg);

/// True when greedy decoding after <bos> + prefix starts with `target`.
bool elicits(const Model& model, std::span<const TokenId> prefix, std::span<const TokenId> target);

}  // namespace unmemo
