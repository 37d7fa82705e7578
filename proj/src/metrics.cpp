#include "unmemo/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <utility>

namespace unmemo {

namespace {
bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || static_cast<unsigned char>(c) >= 0x80; }
}  // namespace

WordSeq split_words(std::string_view text) {
  WordSeq out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t b = i, e = j;
    while (b < e && !is_word_char(text[b])) ++b;
    while (e > b && !is_word_char(text[e - 1])) --e;
    if (e > b) {
      std::string w(text.substr(b, e - b));
      for (auto& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      out.push_back(std::move(w));
    }
    i = j;
  }
  return out;
}

int lcs_words(const WordSeq& a, const WordSeq& b) {
  std::vector<int> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

int lcs_contiguous_words(const WordSeq& a, const WordSeq& b) {
  std::vector<int> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  int best = 0;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : 0;
      best = std::max(best, cur[j]);
    }
    std::swap(prev, cur);
  }
  return best;
}

int edit_distance_words(const WordSeq& a, const WordSeq& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

Rouge2 rouge2(const WordSeq& candidate, const WordSeq& reference) {
  if (candidate.size() < 2 || reference.size() < 2) return {};
  using Bigram = std::pair<std::string_view, std::string_view>;
  std::map<Bigram, int> cand, ref;
  for (std::size_t i = 0; i + 1 < candidate.size(); ++i) ++cand[{candidate[i], candidate[i + 1]}];
  for (std::size_t i = 0; i + 1 < reference.size(); ++i) ++ref[{reference[i], reference[i + 1]}];
  int overlap = 0;
  for (const auto& [bg, n] : cand) {
    auto it = ref.find(bg);
    if (it != ref.end()) overlap += std::min(n, it->second);
  }
  Rouge2 r;
  r.precision = static_cast<double>(overlap) / static_cast<double>(candidate.size() - 1);
  r.recall = static_cast<double>(overlap) / static_cast<double>(reference.size() - 1);
  r.f1 = overlap == 0 ? 0.0 : 2 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

}  // namespace unmemo
