#pragma once

// JSON mappings for configuration and result types.

#include <json.hpp>

#include "unmemo/acr.hpp"
#include "unmemo/corpus.hpp"
#include "unmemo/harness.hpp"
#include "unmemo/model.hpp"
#include "unmemo/probe.hpp"
#include "unmemo/trainer.hpp"
#include "unmemo/unmemorize.hpp"

namespace unmemo {

NLOHMANN_JSON_SERIALIZE_ENUM(CandidateStrategy, {{CandidateStrategy::kPlainTopK, "plain-top-k"},
                                                 {CandidateStrategy::kMatchCaseAndSpace, "match-case-and-space"}})
NLOHMANN_JSON_SERIALIZE_ENUM(KlDirection, {{KlDirection::kForward, "forward"}, {KlDirection::kReverse, "reverse"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ExclusionReason, {{ExclusionReason::kSpecialToken, "special-token"},
                                               {ExclusionReason::kSaturatedProbability, "saturated-probability"}})
NLOHMANN_JSON_SERIALIZE_ENUM(StopReason, {{StopReason::kThreshold, "threshold"}, {StopReason::kMaxSteps, "max_steps"}})
NLOHMANN_JSON_SERIALIZE_ENUM(DecodeMode, {{DecodeMode::kGreedy, "greedy"}, {DecodeMode::kTemperature, "temperature"}})

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CorpusParams, seed, forget_count, forget_words, retain_count,
                                                retain_words, heldout_count, organic_count, organic_words)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, n_layers, n_heads, d_model, d_ff, context_len, vocab_size,
                                                init_seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainingMeta, steps, loss_digest, heldout_perplexity)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, learning_rate, beta1, beta2, steps, epochs, batch_size,
                                                window, warmup_steps, clip_norm, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MemorizationCriterion, prefix_len, beta, greedy_fraction)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ObliviateConfig, stride, top_k, lambda_f, lambda_m, stop_threshold,
                                                certainty_cutoff, floor_prob, learning_rate, max_steps,
                                                candidate_strategy, kl_direction)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ProbeProtocol, offsets, prefix_lengths, greedy, temperature_mode,
                                                temperature, samples_per_temp, prompt_prefix, max_new_tokens, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AcrConfig, max_prefix_len, iters_per_len, candidates_per_position, seed)

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TrainLogRow, step, split, loss, perplexity)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ProbeRow, offset, prefix_len, mode, sample, generated, suffix_words,
                                   generated_words, lcs, lcs_contiguous, edit_distance, rouge2_f1, rouge2_recall)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SkippedCombination, offset, prefix_len)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ProbeResult, article_id, rows, skipped, best_lcs, best_lcs_contiguous, best_ed,
                                   best_rouge2, best_lcs_ratio, best_ed_ratio)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(StepLosses, step, forget, maintain, total, max_target_prob)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PositionProb, position, target, prob)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(UnmemorizeReport, steps_run, final_max_target_prob, stop_reason, losses,
                                   final_target_probs, maintain_drift)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AcrLengthLog, length, iterations, best_loss, matched_tokens, elicited)

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AblationGrids, stride, top_k, lambda_m, candidate_strategy)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ExperimentConfig, corpus, corpus_dir, model, pretrain, memorize,
                                                criterion, organic_criterion, obliviate, probe, acr, acr_sentences,
                                                acr_lead_tokens,
                                                run_acr, ablation, out_dir, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ArticleMetrics, id, suffix_words, best_lcs, best_lcs_contiguous, best_ed,
                                   best_rouge2, best_lcs_ratio, best_ed_ratio)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AcrEntry, id, kind, target_len, prefix_len, elicited, acr)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(UnmemorizeSummary, steps_run, stop_reason, final_max_target_prob, target_count)

inline void to_json(nlohmann::json& j, const AcrResult& r) {
  j = nlohmann::json{{"elicited", r.elicited},
                     {"acr", r.acr},
                     {"failure", r.failure()},
                     {"target_len", r.target_len},
                     {"best_prefix", r.best_prefix ? nlohmann::json(*r.best_prefix) : nlohmann::json(nullptr)},
                     {"log", r.log}};
}

inline void to_json(nlohmann::json& j, const TargetSelection& s) {
  j = nlohmann::json::object();
  j["candidates"] = s.candidates;
  j["targets"] = nlohmann::json::array();
  for (const auto& t : s.targets)
    j["targets"].push_back({{"position", t.position},
                            {"target", t.forget.target},
                            {"support", t.forget.support},
                            {"log_q", t.forget.log_q},
                            {"reference_top1", t.reference_top1}});
  j["excluded"] = nlohmann::json::array();
  for (const auto& e : s.excluded) j["excluded"].push_back({{"position", e.position}, {"reason", e.reason}});
}

}  // namespace unmemo
