#pragma once

#include <span>
#include <string>
#include <vector>

#include "unmemo/corpus.hpp"
#include "unmemo/model.hpp"

namespace unmemo {

enum class CandidateStrategy { kPlainTopK, kMatchCaseAndSpace };

/// Argument order of the forget KL. kForward is KL(live || target).
enum class KlDirection { kForward, kReverse };

struct ObliviateConfig {
  int stride = 5;
  int top_k = 10;
  double lambda_f = 1.0;
  double lambda_m = 1.0;
  double stop_threshold = 0.05;   // tau
  double certainty_cutoff = 1e-3; // top-1 prob >= 1 - cutoff is "saturated"
  double floor_prob = 1e-6;       // mass left on the removed token
  double learning_rate = 1e-4;
  int max_steps = 1000;
  CandidateStrategy candidate_strategy = CandidateStrategy::kPlainTopK;
  KlDirection kl_direction = KlDirection::kForward;

  void validate(std::size_t vocab_size) const;
};

const char* to_string(CandidateStrategy s);
const char* to_string(KlDirection d);

/// Surface shape used by the match-case-and-space candidate strategy.
struct TokenShape {
  bool capitalized = false;
  bool leading_space = true;  // false for punctuation that attaches left
  bool operator==(const TokenShape&) const = default;
};

std::vector<TokenShape> token_shapes(const Vocab& vocab);

/// Top-k ids by descending logit; ties go to the lower id.
template <typename T>
std::vector<TokenId> top_k_ids(std::span<const T> logits, int k);

/// The removed-token distribution q over support K for one position.
struct ForgetTarget {
  TokenId target = 0;
  std::vector<TokenId> support;  // target first, then alternates by reference rank
  std::vector<double> log_q;     // aligned with support
};

ForgetTarget build_forget_target(std::span<const float> reference_logits, const ObliviateConfig& cfg,
                                 std::span<const TokenShape> shapes = {});

/// KL over the support between live restricted softmax p and q. When
/// `d_logits` is non-empty, `scale * dL/dz` is added into it.
template <typename T>
double forget_loss(std::span<const T> live_logits, const ForgetTarget& target,
                   KlDirection direction = KlDirection::kForward, std::span<T> d_logits = {}, double scale = 1.0);

/// Reference top-k support with its restricted, renormalized log-probs.
struct MaintainTarget {
  std::vector<TokenId> support;
  std::vector<double> log_p;
};

MaintainTarget build_maintain_target(std::span<const float> reference_logits, int top_k);

/// KL(reference restricted || live restricted) over the reference top-k.
template <typename T>
double maintain_loss(std::span<const T> live_logits, const MaintainTarget& target, std::span<T> d_logits = {},
                     double scale = 1.0);

double maintain_loss(std::span<const float> live_logits, std::span<const float> reference_logits,
                     const ObliviateConfig& cfg);

enum class ExclusionReason { kSpecialToken, kSaturatedProbability };
const char* to_string(ExclusionReason r);

struct TargetEntry {
  int position = 0;  // index of the token being suppressed; predicted by row position-1
  ForgetTarget forget;
  double reference_top1 = 0.0;
};

struct Exclusion {
  int position = 0;
  ExclusionReason reason = ExclusionReason::kSpecialToken;
};

struct TargetSelection {
  std::vector<int> candidates;  // stride pattern before exclusions
  std::vector<TargetEntry> targets;
  std::vector<Exclusion> excluded;

  std::vector<int> target_positions() const;
};

/// Positions s, 2s+1, 3s+2, ... below `length`.
std::vector<int> stride_positions(int length, int stride);

TargetSelection select_targets(const FrozenModel& reference, const TokenSequence& seq, const ObliviateConfig& cfg,
                               std::span<const TokenShape> shapes = {});

/// Per-article work fixed before optimization: the selection plus maintain
/// targets at every position that is neither a target nor excluded.
struct PreparedArticle {
  std::vector<TokenId> ids;
  TargetSelection selection;
  std::vector<int> maintain_positions;
  std::vector<MaintainTarget> maintain;
};

std::vector<PreparedArticle> prepare_articles(const FrozenModel& reference, std::span<const TokenSequence> articles,
                                              const ObliviateConfig& cfg, std::span<const TokenShape> shapes = {});

struct ObjectiveValue {
  double forget = 0.0;
  double maintain = 0.0;
  double total = 0.0;
  double max_target_prob = 0.0;
};

/// Mean over articles of (lambda_f * mean forget + lambda_m * mean maintain).
/// Gradients are accumulated into `grads` when it is non-empty.
template <typename T>
ObjectiveValue unmemorize_objective(const Transformer<T>& model, std::span<const PreparedArticle> articles,
                                    const ObliviateConfig& cfg, std::span<T> grads = {});

enum class StopReason { kThreshold, kMaxSteps };
const char* to_string(StopReason r);

struct StepLosses {
  int step = 0;
  double forget = 0.0;
  double maintain = 0.0;
  double total = 0.0;
  double max_target_prob = 0.0;
};

struct PositionProb {
  int position = 0;
  TokenId target = 0;
  double prob = 0.0;
};

struct UnmemorizeReport {
  int steps_run = 0;
  double final_max_target_prob = 0.0;
  StopReason stop_reason = StopReason::kMaxSteps;
  std::vector<StepLosses> losses;
  std::vector<std::vector<PositionProb>> final_target_probs;  // per article
  double maintain_drift = 0.0;  // mean maintain KL at maintain positions after the run
};

/// Live full-softmax probability of every target token.
std::vector<std::vector<PositionProb>> target_probabilities(const Model& live,
                                                            std::span<const PreparedArticle> articles);

/// Mean KL(reference || live) over the maintain positions of `articles`.
double maintain_drift(const Model& live, std::span<const PreparedArticle> articles);

/// Runs forget + maintain optimization on `live` in place. On a non-finite
/// loss the live model is restored to its last good parameters and a
/// numeric error is thrown.
UnmemorizeReport unmemorize(Model& live, std::span<const PreparedArticle> articles, const ObliviateConfig& cfg);

UnmemorizeReport unmemorize(Model& live, const FrozenModel& reference, std::span<const TokenSequence> forget_set,
                            const ObliviateConfig& cfg, std::span<const TokenShape> shapes = {});

}  // namespace unmemo
