#include "unmemo/acr.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "unmemo/error.hpp"
#include "unmemo/probe.hpp"
#include "unmemo/rng.hpp"

namespace unmemo {

void AcrConfig::validate() const {
  require(max_prefix_len >= 1, ErrorKind::kInvalidArgument, "max_prefix_len must be >= 1");
  require(iters_per_len >= 1, ErrorKind::kInvalidArgument, "iters_per_len must be >= 1");
  require(candidates_per_position >= 1, ErrorKind::kInvalidArgument, "candidates_per_position must be >= 1");
}

bool elicits(const Model& model, std::span<const TokenId> prefix, std::span<const TokenId> target) {
  std::vector<TokenId> input{Vocab::kBos};
  input.insert(input.end(), prefix.begin(), prefix.end());
  const auto out = generate(model, input, static_cast<int>(target.size()), DecodeMode::kGreedy);
  return out.size() == target.size() && std::equal(out.begin(), out.end(), target.begin());
}

namespace {

struct Score {
  int matched = 0;
  double loss = 0.0;

  bool better_than(const Score& o) const { return matched > o.matched || (matched == o.matched && loss < o.loss); }
};

std::vector<TokenId> assemble(std::span<const TokenId> prefix, std::span<const TokenId> target) {
  std::vector<TokenId> ids{Vocab::kBos};
  ids.insert(ids.end(), prefix.begin(), prefix.end());
  ids.insert(ids.end(), target.begin(), target.end());
  return ids;
}

// Teacher-forced target NLL and leading arg-max agreement. Row m + j
// predicts target[j] for input <bos> + prefix(m) + target.
Score score_logits(const LogitMatrix& logits, int m, std::span<const TokenId> target, LogitMatrix* d_logits) {
  Score s;
  const auto n = static_cast<double>(target.size());
  bool still_matching = true;
  if (d_logits) d_logits->setZero(logits.rows(), logits.cols());
  for (std::size_t j = 0; j < target.size(); ++j) {
    const auto r = static_cast<Eigen::Index>(m + static_cast<int>(j));
    const auto row = logits.row(r).cast<double>();
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < row.size(); ++i)
      if (row(i) > row(best)) best = i;
    if (still_matching && best == target[j]) ++s.matched;
    else still_matching = false;
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    s.loss += (lse - row(target[j])) / n;
    if (d_logits) {
      d_logits->row(r) = ((row.array() - lse).exp() / n).cast<float>().matrix();
      (*d_logits)(r, target[j]) -= static_cast<float>(1.0 / n);
    }
  }
  return s;
}

}  // namespace

AcrResult compress(const Model& model, std::span<const TokenId> target, const AcrConfig& cfg) {
  cfg.validate();
  require(!target.empty(), ErrorKind::kInvalidArgument, "compress needs a non-empty target");
  const auto& mc = model.config();
  const int vocab = mc.vocab_size;
  require(vocab > Vocab::kUnk + 1, ErrorKind::kInvalidArgument, "vocabulary has no ordinary tokens");

  AcrResult result;
  result.target_len = static_cast<int>(target.size());
  const int max_len = std::min(cfg.max_prefix_len, mc.context_len - 1 - static_cast<int>(target.size()));
  const float* tok_emb = model.tensor("tok_emb");
  Eigen::Map<const LogitMatrix> emb(tok_emb, vocab, mc.d_model);

  ForwardTape<float> tape;
  LogitMatrix dlogits, d_input;
  AlignedVector<float> scratch(model.num_params());

  for (int m = 1; m <= max_len; ++m) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(m)));
    std::vector<TokenId> prefix(static_cast<std::size_t>(m));
    auto draw = [&] {
      for (auto& t : prefix)
        t = static_cast<TokenId>(Vocab::kUnk + 1 + rng.below(static_cast<std::uint64_t>(vocab - Vocab::kUnk - 1)));
    };
    draw();

    AcrLengthLog entry;
    entry.length = m;
    Score current{};
    std::optional<Score> best_seen;
    bool elicited = false;
    for (int iter = 0; iter < cfg.iters_per_len && !elicited; ++iter) {
      entry.iterations = iter + 1;
      const auto ids = assemble(prefix, target);
      const auto logits = model.forward(ids, tape);
      current = score_logits(logits, m, target, &dlogits);
      if (current.matched == static_cast<int>(target.size()) && elicits(model, prefix, target)) {
        elicited = true;
        break;
      }
      // d loss / d one-hot(prefix_i) = d_input[1 + i] . E^T
      std::fill(scratch.begin(), scratch.end(), 0.0f);
      model.backward(tape, dlogits, scratch, &d_input);
      const LogitMatrix onehot_grad = d_input.block(1, 0, m, mc.d_model) * emb.transpose();

      bool improved = false;
      for (int i = 0; i < m && !elicited; ++i) {
        std::vector<TokenId> order(static_cast<std::size_t>(vocab - Vocab::kUnk - 1));
        std::iota(order.begin(), order.end(), Vocab::kUnk + 1);
        const auto k = std::min<std::size_t>(static_cast<std::size_t>(cfg.candidates_per_position), order.size());
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                          [&](TokenId a, TokenId b) {
                            const float ga = onehot_grad(i, a), gb = onehot_grad(i, b);
                            return ga < gb || (ga == gb && a < b);
                          });
        TokenId best_tok = prefix[static_cast<std::size_t>(i)];
        Score best = current;
        for (std::size_t c = 0; c < k; ++c) {
          if (order[c] == prefix[static_cast<std::size_t>(i)]) continue;
          auto trial = prefix;
          trial[static_cast<std::size_t>(i)] = order[c];
          const auto s = score_logits(model.forward(assemble(trial, target)), m, target, nullptr);
          if (s.better_than(best)) {
            best = s;
            best_tok = order[c];
          }
        }
        if (best_tok != prefix[static_cast<std::size_t>(i)]) {
          prefix[static_cast<std::size_t>(i)] = best_tok;
          current = best;
          improved = true;
          if (current.matched == static_cast<int>(target.size()) && elicits(model, prefix, target)) elicited = true;
        }
      }
      if (!best_seen || current.better_than(*best_seen)) best_seen = current;
      if (!improved) draw();  // stuck: restart from fresh random tokens
    }
    if (elicited || !best_seen) best_seen = current;
    entry.best_loss = best_seen->loss;
    entry.matched_tokens = best_seen->matched;
    entry.elicited = elicited;
    result.log.push_back(entry);
    if (elicited) {
      result.elicited = true;
      result.best_prefix = prefix;
      result.acr = static_cast<double>(target.size()) / static_cast<double>(m);
      break;
    }
  }
  return result;
}

}  // namespace unmemo
