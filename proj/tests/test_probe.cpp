#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "support.hpp"
#include "unmemo/error.hpp"
#include "unmemo/metrics.hpp"
#include "unmemo/probe.hpp"
#include "unmemo/rng.hpp"
#include "unmemo/trainer.hpp"

using namespace unmemo;
using unmemo::testing::micro_config;
using unmemo::testing::random_ids;
using unmemo::testing::small_vocab;

namespace {

TokenId argmax_low(const LogitMatrix& logits, Eigen::Index row) {
  TokenId best = 0;
  for (Eigen::Index j = 1; j < logits.cols(); ++j)
    if (logits(row, j) > logits(row, best)) best = static_cast<TokenId>(j);
  return best;
}

// Re-runs the full forward pass at every step instead of using the cache.
int match_oracle(const Model& model, const std::vector<TokenId>& seq, int start, int len) {
  std::vector<TokenId> ctx(seq.begin() + start, seq.begin() + start + len);
  int n = 0;
  for (std::size_t t = static_cast<std::size_t>(start + len); t < seq.size(); ++t) {
    if (static_cast<int>(ctx.size()) > model.config().context_len) break;
    const auto logits = model.forward(ctx);
    if (argmax_low(logits, logits.rows() - 1) != seq[t]) break;
    ++n;
    ctx.push_back(seq[t]);
  }
  return n;
}

struct Memorized {
  Vocab vocab;
  Model model;
  TokenSequence article;
};

Memorized memorized_micro() {
  auto vocab = small_vocab();
  auto seq = encode(vocab, generate_articles(3, 1, 40).front());
  seq.ids.resize(24);
  auto article = frame(seq);
  auto model = init_model(micro_config(static_cast<int>(vocab.size())));
  MemorizationCriterion crit;
  crit.prefix_len = 3;
  crit.greedy_fraction = 1.0;
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.epochs = 400;
  cfg.batch_size = 1;
  const std::vector<TokenSequence> forget{article};
  REQUIRE(memorize(model, forget, crit, cfg).converged);
  return {std::move(vocab), std::move(model), std::move(article)};
}

}  // namespace

TEST_CASE("generation is deterministic and low temperature reproduces greedy") {
  const auto model = init_model(micro_config(24));
  const auto prefix = random_ids(4, 5, 24);
  const auto g1 = generate(model, prefix, 20, DecodeMode::kGreedy);
  CHECK(g1 == generate(model, prefix, 20, DecodeMode::kGreedy));
  CHECK(generate(model, prefix, 20, DecodeMode::kTemperature, 1e-4, 9) == g1);
  const auto s1 = generate(model, prefix, 20, DecodeMode::kTemperature, 1.5, 3);
  CHECK(s1 == generate(model, prefix, 20, DecodeMode::kTemperature, 1.5, 3));
  CHECK(g1.size() <= 20u);
  CHECK(std::find(g1.begin(), g1.end(), Vocab::kEos) == g1.end());
}

TEST_CASE("generation errors and the context limit") {
  const auto model = init_model(micro_config(24));
  CHECK_THROWS_AS(generate(model, std::vector<TokenId>{}, 5, DecodeMode::kGreedy), Error);
  CHECK_THROWS_AS(generate(model, random_ids(1, 3, 24), 5, DecodeMode::kTemperature, 0.0), Error);
  CHECK_THROWS_AS(generate(model, random_ids(1, 33, 24), 5, DecodeMode::kGreedy), Error);
  const auto out = generate(model, random_ids(1, 30, 24), 50, DecodeMode::kGreedy);
  CHECK(out.size() <= 3u);  // positions 30 and 31 fill the context, plus the last prediction
}

TEST_CASE("greedy match length agrees with a step-by-step oracle on 50 cases") {
  const auto model = init_model(micro_config(24, 3));
  Rng rng(77);
  for (int c = 0; c < 50; ++c) {
    // Build sequences partly from the model's own greedy output so matches are non-trivial.
    auto seq = random_ids(rng.next(), 4 + static_cast<int>(rng.below(6)), 24);
    const auto cont = generate(model, seq, static_cast<int>(rng.below(10)), DecodeMode::kGreedy);
    seq.insert(seq.end(), cont.begin(), cont.end());
    const auto tail = random_ids(rng.next(), 1 + static_cast<int>(rng.below(6)), 24);
    seq.insert(seq.end(), tail.begin() + 1, tail.end());
    const int start = static_cast<int>(rng.below(3));
    const int len = 1 + static_cast<int>(rng.below(3));
    REQUIRE(greedy_match_length(model, seq, start, len) == match_oracle(model, seq, start, len));
  }
  const auto seq = random_ids(1, 6, 24);
  CHECK(greedy_match_length(model, seq, 0, 6) == 0);
  CHECK_THROWS_AS(greedy_match_length(model, seq, 3, 4), Error);
}

TEST_CASE("even_lengths enumerates even values") {
  CHECK(even_lengths(8, 20) == std::vector<int>{8, 10, 12, 14, 16, 18, 20});
  CHECK(even_lengths(3, 9) == std::vector<int>{4, 6, 8});
  CHECK(even_lengths(5, 5).empty());
}

TEST_CASE("memorized micro model: full match and near-total probe recovery") {
  const auto m = memorized_micro();
  const int n = static_cast<int>(m.article.ids.size());
  CHECK(greedy_match_length(m.model, m.article.ids, 0, 3) == n - 3);

  ProbeProtocol p;
  p.offsets = {0, 2, 4};
  p.prefix_lengths = {4, 6};
  p.temperature_mode = false;
  const auto r = probe_sweep(m.model, m.vocab, m.article, p, "a0");
  CHECK(r.article_id == "a0");
  CHECK(r.rows.size() == 6u);
  int max_suffix = 0;
  for (const auto& row : r.rows) max_suffix = std::max(max_suffix, row.suffix_words);
  CHECK(r.best_lcs >= 0.9 * max_suffix);
}

TEST_CASE("probe aggregates are the extrema of the table") {
  const auto vocab = small_vocab();
  const auto model = init_model(micro_config(static_cast<int>(vocab.size()), 8));
  auto seq = encode(vocab, generate_articles(3, 1, 40).front());
  seq.ids.resize(26);
  const auto article = frame(seq);
  ProbeProtocol p;
  p.offsets = {0, 3, 6, 200};
  p.prefix_lengths = {2, 4, 40};
  p.samples_per_temp = 2;
  p.seed = 5;
  const auto r = probe_sweep(model, vocab, article, p);
  CHECK(!r.skipped.empty());
  REQUIRE(!r.rows.empty());
  int lcs = 0, ed = 1 << 30;
  double rouge = 0;
  for (const auto& row : r.rows) {
    lcs = std::max(lcs, row.lcs);
    ed = std::min(ed, row.edit_distance);
    rouge = std::max(rouge, row.rouge2_f1);
    CHECK(row.lcs <= row.suffix_words);
    CHECK(row.lcs_contiguous <= row.lcs);
    CHECK(row.edit_distance <= std::max(row.generated_words, row.suffix_words));
    const auto gen = split_words(row.generated);
    CHECK(static_cast<int>(gen.size()) == row.generated_words);
  }
  CHECK(r.best_lcs == lcs);
  CHECK(r.best_ed == ed);
  CHECK(r.best_rouge2 == rouge);
  // 3 feasible offsets x 2 feasible lengths x (1 greedy + 2 samples)
  CHECK(r.rows.size() == 18u);
  CHECK(r.skipped.size() == 6u);

  const auto again = probe_sweep(model, vocab, article, p);
  REQUIRE(again.rows.size() == r.rows.size());
  for (std::size_t i = 0; i < r.rows.size(); ++i) CHECK(again.rows[i].generated == r.rows[i].generated);

  const std::vector<ProbeResult> all{r};
  const auto path = std::filesystem::temp_directory_path() / "unmemo_probe.csv";
  write_probe_csv(path, all);
  std::ifstream in(path);
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 19);
  std::filesystem::remove(path);
}

TEST_CASE("a protocol with no feasible combination is refused") {
  const auto vocab = small_vocab();
  const auto model = init_model(micro_config(static_cast<int>(vocab.size())));
  const auto article = frame(encode(vocab, generate_articles(3, 1, 40).front()));
  ProbeProtocol p;
  p.offsets = {500};
  try {
    probe_sweep(model, vocab, article, p);
    FAIL("expected protocol-infeasible");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kProtocolInfeasible);
  }
  p.offsets = {-1};
  CHECK_THROWS_AS(p.validate(), Error);
}
