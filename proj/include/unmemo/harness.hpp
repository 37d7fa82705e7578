#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "unmemo/acr.hpp"
#include "unmemo/corpus.hpp"
#include "unmemo/error.hpp"
#include "unmemo/model.hpp"
#include "unmemo/probe.hpp"
#include "unmemo/trainer.hpp"
#include "unmemo/unmemorize.hpp"

namespace unmemo {

inline constexpr const char* kToolVersion = "0.1.0";

struct AblationGrids {
  std::vector<int> stride{0, 1, 2, 5, 10, 20, 50};
  std::vector<int> top_k{5, 10, 20};
  std::vector<double> lambda_m{1.0, 0.0};
  std::vector<CandidateStrategy> candidate_strategy{CandidateStrategy::kPlainTopK,
                                                    CandidateStrategy::kMatchCaseAndSpace};
};

struct ExperimentConfig {
  CorpusParams corpus;
  std::string corpus_dir;  // load articles from here instead of generating
  ModelConfig model{.n_layers = 2, .n_heads = 4, .d_model = 128, .d_ff = 512, .context_len = 256};
  TrainConfig pretrain{.learning_rate = 1e-3, .steps = 1500, .batch_size = 8, .window = 64, .warmup_steps = 100};
  TrainConfig memorize{.learning_rate = 3e-4, .epochs = 300, .batch_size = 5};
  MemorizationCriterion criterion;
  // Shallow preset for the pseudo-organic family (corpus.organic_count > 0).
  MemorizationCriterion organic_criterion{.greedy_fraction = 0.6};
  ObliviateConfig obliviate;
  ProbeProtocol probe;
  AcrConfig acr;
  int acr_sentences = 3;   // leading sentences per article used as ACR targets
  // Tokens dropped from the front of each ACR target. The model has absolute
  // position embeddings, so a target that starts right after <bos> moves off
  // its memorized positions once any prompt is inserted.
  int acr_lead_tokens = 3;
  bool run_acr = true;
  AblationGrids ablation;
  std::string out_dir = "runs";
  std::uint64_t seed = 1;  // master seed

  void validate() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);

/// Per-stage seeds: corpus 0, init 1, pretrain 2, memorize 3, probe 4, acr 5,
/// each derive_seed(master, index).
ExperimentConfig resolve_seeds(ExperimentConfig cfg);

/// SHA-256 of the canonical config JSON without output paths.
std::string config_digest(const ExperimentConfig& cfg);

struct ArticleMetrics {
  std::string id;
  int suffix_words = 0;
  int best_lcs = 0;
  int best_lcs_contiguous = 0;
  int best_ed = 0;
  double best_rouge2 = 0.0;
  double best_lcs_ratio = 0.0;
  double best_ed_ratio = 0.0;
};

struct AcrEntry {
  std::string id;
  std::string kind;  // "memorized" target or rephrased "control"
  int target_len = 0;
  int prefix_len = 0;
  bool elicited = false;
  double acr = 0.0;
};

struct UnmemorizeSummary {
  int steps_run = 0;
  std::string stop_reason;
  double final_max_target_prob = 0.0;
  int target_count = 0;
};

/// Metrics for one model state (memorized, unmemorized, or an ablation cell).
struct StateMetrics {
  std::string state;
  std::string status = "ok";  // "failed" for an ablation cell that aborted
  std::string error;
  std::vector<ArticleMetrics> articles;
  double mean_best_lcs = 0.0;
  double mean_best_lcs_contiguous = 0.0;
  double mean_best_ed = 0.0;
  double mean_best_rouge2 = 0.0;
  double retain_perplexity = 0.0;
  double maintain_drift = 0.0;
  std::optional<UnmemorizeSummary> unmemorize;
  std::vector<AcrEntry> acr;

  void aggregate();
};

struct MetricsReport {
  std::string tool_version = kToolVersion;
  std::string config_digest;
  std::uint64_t master_seed = 0;
  bool memorization_converged = false;
  int memorization_epochs = 0;
  std::vector<StateMetrics> states;

  const StateMetrics* find(const std::string& state) const;
};

/// Stable JSON, and its digest over everything except the digest itself.
nlohmann::json report_json(const MetricsReport& report);
std::string report_digest(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);

/// Error raised by a pipeline stage; carries the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause);
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// Fresh append-only directory `<out>/run-<digest12>-<n>`.
std::filesystem::path make_run_dir(const std::filesystem::path& out, const std::string& digest);

struct Workspace {
  CorpusSplit corpus;
  Vocab vocab;
  std::vector<TokenSequence> forget, retain, heldout, organic;
};

Workspace build_workspace(const ExperimentConfig& cfg);

/// cfg.model with vocab_size filled in; checks every article fits.
ModelConfig sized_model(const ExperimentConfig& cfg, const Workspace& ws);

/// Throws kConfig when the checkpoint was trained on another vocabulary.
void check_vocab(const Model& model, const Workspace& ws);

/// corpus -> pretrain -> memorize, saving checkpoints into `dir`.
Model train_memorized(const ExperimentConfig& cfg, const Workspace& ws, const std::filesystem::path& dir,
                      MemorizeReport* memorize_report = nullptr);

/// Probes every forget (or organic) article and returns per-article best cases.
std::vector<ProbeResult> probe_articles(const Model& model, const Workspace& ws, const ProbeProtocol& protocol,
                                        bool organic = false);

std::vector<AcrEntry> acr_articles(const Model& model, const Workspace& ws, const ExperimentConfig& cfg);

/// Full experiment. Artifacts and report.json land in a fresh run directory
/// under cfg.out_dir whose path is returned through `run_dir`.
MetricsReport run_pipeline(const ExperimentConfig& cfg, std::filesystem::path* run_dir = nullptr);

enum class AblationAxis { kStride, kTopK, kLambdaM, kCandidateStrategy };
AblationAxis parse_axis(const std::string& name);
const char* to_string(AblationAxis axis);

/// One unmemorize + probe per grid cell from the same memorized model. If
/// `memorized_checkpoint` is empty the model is trained first.
MetricsReport run_ablation(const ExperimentConfig& cfg, AblationAxis axis,
                           const std::filesystem::path& memorized_checkpoint = {},
                           std::filesystem::path* run_dir = nullptr);

/// Validates against the bundled schema, then writes report.json and
/// comparison.csv. Throws kSchema on validation failure, kIo when unwritable.
void write_report(const MetricsReport& report, const std::filesystem::path& dir);

/// Minimal JSON-Schema subset (type, properties, required, items, enum,
/// minimum, maximum, additionalProperties=false). Returns error messages.
std::vector<std::string> validate_json(const nlohmann::json& schema, const nlohmann::json& doc);
nlohmann::json load_report_schema();

}  // namespace unmemo
