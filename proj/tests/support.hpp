#pragma once

#include <string>
#include <vector>

#include "unmemo/corpus.hpp"
#include "unmemo/model.hpp"

namespace unmemo::testing {

inline ModelConfig micro_config(int vocab, std::uint64_t seed = 11) {
  return ModelConfig{.n_layers = 2, .n_heads = 2, .d_model = 16, .d_ff = 32, .context_len = 32,
                     .vocab_size = vocab, .init_seed = seed};
}

/// Vocabulary over a handful of generated articles; big enough for the
/// micro model tests.
inline Vocab small_vocab() {
  const auto texts = generate_articles(3, 4, 40);
  return build_vocab(texts);
}

inline std::vector<TokenId> random_ids(std::uint64_t seed, int n, int vocab) {
  std::vector<TokenId> ids{Vocab::kBos};
  std::uint64_t x = seed;
  for (int i = 1; i < n; ++i) {
    x = x * 6364136223846793005ULL + 1442695040888963407ULL;
    ids.push_back(static_cast<TokenId>(Vocab::kUnk + 1 + (x >> 33) % static_cast<std::uint64_t>(vocab - Vocab::kUnk - 1)));
  }
  return ids;
}

}  // namespace unmemo::testing
