#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "unmemo/corpus.hpp"
#include "unmemo/model.hpp"

namespace unmemo {

struct TrainConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int steps = 0;        // pretraining optimizer steps
  int epochs = 0;       // memorization epoch cap
  int batch_size = 8;
  int window = 128;     // pretraining window length in tokens
  int warmup_steps = 0;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Greedy-decoding stand-in for (l, beta)-memorization: the continuation
/// from the first `prefix_len` tokens must match at least `greedy_fraction`
/// of the remaining tokens.
struct MemorizationCriterion {
  int prefix_len = 16;
  double beta = 0.5;
  double greedy_fraction = 0.95;

  void validate() const;
};

struct TrainLogRow {
  int step = 0;
  std::string split;
  double loss = 0.0;
  double perplexity = 0.0;
};

struct PretrainReport {
  std::vector<TrainLogRow> log;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double heldout_perplexity = 0.0;
};

struct MemorizeReport {
  bool converged = false;
  int epochs_run = 0;
  std::vector<TrainLogRow> log;
  /// Smallest per-article matched fraction after each epoch.
  std::vector<double> min_fraction;
};

/// Next-token training on random windows of the concatenated retain stream.
PretrainReport pretrain(Model& model, std::span<const TokenSequence> retain_set, const TrainConfig& cfg,
                        std::span<const TokenSequence> heldout = {});

/// Fine-tunes on the forget set until every article meets the criterion or
/// the epoch cap is hit.
MemorizeReport memorize(Model& model, std::span<const TokenSequence> forget_set,
                        const MemorizationCriterion& criterion, const TrainConfig& cfg);

/// Fraction of the post-prefix tokens reproduced by greedy decoding.
double greedy_fraction(const Model& model, const TokenSequence& seq, int prefix_len);

/// exp(mean teacher-forced next-token negative log-likelihood).
double perplexity(const Model& model, std::span<const TokenSequence> corpus);

/// Mean next-token cross-entropy of one sequence; fills d(loss)/d(logits)
/// scaled by `grad_scale` when `d_logits` is non-null.
double sequence_cross_entropy(const LogitMatrix& logits, std::span<const TokenId> ids, LogitMatrix* d_logits,
                              double grad_scale);

void write_training_log(const std::filesystem::path& path, std::span<const TrainLogRow> rows);

}  // namespace unmemo
