#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace unmemo {

/// Lower-cased words with surrounding punctuation stripped; pure punctuation
/// tokens are dropped.
using WordSeq = std::vector<std::string>;

WordSeq split_words(std::string_view text);

/// Longest common subsequence of words (dynamic programming).
int lcs_words(const WordSeq& a, const WordSeq& b);

/// Longest common contiguous run of words.
int lcs_contiguous_words(const WordSeq& a, const WordSeq& b);

/// Word-level Levenshtein distance with unit costs.
int edit_distance_words(const WordSeq& a, const WordSeq& b);

struct Rouge2 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Clipped bigram overlap. Either side with fewer than two words scores 0.
Rouge2 rouge2(const WordSeq& candidate, const WordSeq& reference);

}  // namespace unmemo
