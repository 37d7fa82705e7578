#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace unmemo {

using TokenId = std::int32_t;

/// Word-level vocabulary. Ids 0..3 are the special tokens; every other
/// surface is ordered by first occurrence in the texts it was built from.
class Vocab {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kPad = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kMinSize = 8;  // smallest vocab_size a model accepts
  static constexpr std::size_t kMaxSize = 65536;

  Vocab();
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& surface(TokenId id) const;
  std::optional<TokenId> find(std::string_view surface) const;
  bool is_special(TokenId id) const { return id >= 0 && id <= kUnk; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Appends a surface if it is not present yet. Returns its id.
  TokenId add(std::string_view surface);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct TokenSequence {
  std::vector<TokenId> ids;
  std::string source_text;
};

/// Punctuation marks that become their own tokens and attach to the
/// preceding word when decoding.
bool is_punctuation_token(std::string_view token);

/// Splits on whitespace and peels `. , ; : ! ?` off into separate tokens.
std::vector<std::string> tokenize_words(std::string_view text);

/// Canonical spacing: single spaces between words, none before punctuation.
std::string normalize_text(std::string_view text);

Vocab build_vocab(std::span<const std::string> texts);
TokenSequence encode(const Vocab& vocab, std::string_view text);
std::string decode(const Vocab& vocab, std::span<const TokenId> ids);

/// Wraps a sequence as <bos> ids... <eos>, the form used for training and
/// probing.
TokenSequence frame(const TokenSequence& seq);

/// Seeded synthetic prose. Same arguments always give byte-identical output.
std::vector<std::string> generate_articles(std::uint64_t seed, int count,
                                           int target_words);

/// Replaces content words with same-category alternatives. When `vocab` is
/// given, substitutes are drawn only from words it already contains.
std::string rephrase(std::string_view text, std::uint64_t seed,
                     const Vocab* vocab = nullptr);

/// Text made of the first `n` sentences of `text` (by terminal punctuation).
std::string leading_sentences(std::string_view text, int n);

struct Article {
  std::string id;
  std::string split;
  std::string text;
  int word_count = 0;
};

struct CorpusParams {
  std::uint64_t seed = 7;
  int forget_count = 5;
  int forget_words = 100;
  int retain_count = 400;
  int retain_words = 100;
  int heldout_count = 20;
  int organic_count = 0;
  int organic_words = 100;
};

/// Forget/retain partition plus the held-out retain articles used for
/// perplexity and an optional shallow-memorization set.
struct CorpusSplit {
  std::vector<Article> forget_set;
  std::vector<Article> retain_set;
  std::vector<Article> heldout_set;
  std::vector<Article> organic_set;
  std::uint64_t seed = 0;

  std::vector<std::string> all_texts() const;
};

CorpusSplit build_corpus(const CorpusParams& params);

/// Throws if any article text appears in more than one split.
void check_disjoint(const CorpusSplit& split);

/// One UTF-8 file per article plus manifest.json.
void write_corpus(const CorpusSplit& split, const std::filesystem::path& dir);
CorpusSplit load_corpus(const std::filesystem::path& dir);

/// Encodes and frames every article of a split.
std::vector<TokenSequence> encode_articles(const Vocab& vocab,
                                           std::span<const Article> articles);

}  // namespace unmemo
