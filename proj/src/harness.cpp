#include "unmemo/harness.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "unmemo/digest.hpp"
#include "unmemo/json_io.hpp"
#include "unmemo/rng.hpp"

namespace unmemo {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

template <typename F>
auto stage(const char* name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e);
  }
}

ArticleMetrics to_metrics(const ProbeResult& r) {
  ArticleMetrics m;
  m.id = r.article_id;
  for (const auto& row : r.rows) m.suffix_words = std::max(m.suffix_words, row.suffix_words);
  m.best_lcs = r.best_lcs;
  m.best_lcs_contiguous = r.best_lcs_contiguous;
  m.best_ed = r.best_ed;
  m.best_rouge2 = r.best_rouge2;
  m.best_lcs_ratio = r.best_lcs_ratio;
  m.best_ed_ratio = r.best_ed_ratio;
  return m;
}

StateMetrics state_from_probe(std::string name, std::span<const ProbeResult> probes) {
  StateMetrics s;
  s.state = std::move(name);
  for (const auto& p : probes) s.articles.push_back(to_metrics(p));
  s.aggregate();
  return s;
}

void write_losses_csv(const fs::path& path, std::span<const StepLosses> rows) {
  std::ostringstream out;
  out << "step,forget,maintain,total,max_target_prob\n" << std::setprecision(10);
  for (const auto& r : rows)
    out << r.step << ',' << r.forget << ',' << r.maintain << ',' << r.total << ',' << r.max_target_prob << '\n';
  write_text(path, out.str());
}

std::string fmt(double v) {
  std::ostringstream o;
  o << std::setprecision(10) << v;
  return o.str();
}

}  // namespace

void ExperimentConfig::validate() const {
  ModelConfig sized = model;  // vocab_size is filled in from the corpus later
  if (sized.vocab_size == 0) sized.vocab_size = static_cast<int>(Vocab::kMinSize);
  sized.validate();
  pretrain.validate();
  memorize.validate();
  criterion.validate();
  organic_criterion.validate();
  probe.validate();
  acr.validate();
  require(acr_sentences >= 1, ErrorKind::kConfig, "acr_sentences must be >= 1");
  require(acr_lead_tokens >= 0, ErrorKind::kConfig, "acr_lead_tokens must be >= 0");
  require(corpus.forget_count >= 1, ErrorKind::kConfig, "forget_count must be >= 1");
  require(corpus.organic_count >= 0, ErrorKind::kConfig, "organic_count must be >= 0");
  require(corpus.retain_count >= 1, ErrorKind::kConfig, "retain_count must be >= 1");
  if (!corpus_dir.empty())
    require(fs::is_directory(corpus_dir), ErrorKind::kConfig, "corpus_dir does not exist: " + corpus_dir);
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kConfig, "cannot read config " + path.string());
  try {
    return json::parse(in).get<ExperimentConfig>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, "bad config " + path.string() + ": " + e.what());
  }
}

ExperimentConfig resolve_seeds(ExperimentConfig cfg) {
  const auto m = cfg.seed;
  cfg.corpus.seed = derive_seed(m, 0);
  cfg.model.init_seed = derive_seed(m, 1);
  cfg.pretrain.seed = derive_seed(m, 2);
  cfg.memorize.seed = derive_seed(m, 3);
  cfg.probe.seed = derive_seed(m, 4);
  cfg.acr.seed = derive_seed(m, 5);
  return cfg;
}

std::string config_digest(const ExperimentConfig& cfg) {
  json j = cfg;
  j.erase("out_dir");
  j.erase("corpus_dir");
  return sha256_hex(j.dump());
}

void StateMetrics::aggregate() {
  mean_best_lcs = mean_best_lcs_contiguous = mean_best_ed = mean_best_rouge2 = 0.0;
  if (articles.empty()) return;
  for (const auto& a : articles) {
    mean_best_lcs += a.best_lcs;
    mean_best_lcs_contiguous += a.best_lcs_contiguous;
    mean_best_ed += a.best_ed;
    mean_best_rouge2 += a.best_rouge2;
  }
  const auto n = static_cast<double>(articles.size());
  mean_best_lcs /= n;
  mean_best_lcs_contiguous /= n;
  mean_best_ed /= n;
  mean_best_rouge2 /= n;
}

const StateMetrics* MetricsReport::find(const std::string& state) const {
  for (const auto& s : states)
    if (s.state == state) return &s;
  return nullptr;
}

namespace {

json state_json(const StateMetrics& s) {
  json j;
  j["state"] = s.state;
  j["status"] = s.status;
  j["error"] = s.error;
  j["articles"] = s.articles;
  j["mean_best_lcs"] = s.mean_best_lcs;
  j["mean_best_lcs_contiguous"] = s.mean_best_lcs_contiguous;
  j["mean_best_ed"] = s.mean_best_ed;
  j["mean_best_rouge2"] = s.mean_best_rouge2;
  j["retain_perplexity"] = s.retain_perplexity;
  j["maintain_drift"] = s.maintain_drift;
  j["unmemorize"] = s.unmemorize ? json(*s.unmemorize) : json(nullptr);
  j["acr"] = s.acr;
  return j;
}

json report_body(const MetricsReport& r) {
  json j;
  j["tool_version"] = r.tool_version;
  j["config_digest"] = r.config_digest;
  j["master_seed"] = r.master_seed;
  j["memorization"] = {{"converged", r.memorization_converged}, {"epochs", r.memorization_epochs}};
  j["states"] = json::array();
  for (const auto& s : r.states) j["states"].push_back(state_json(s));
  return j;
}

}  // namespace

std::string report_digest(const MetricsReport& report) { return sha256_hex(report_body(report).dump()); }

json report_json(const MetricsReport& report) {
  json j = report_body(report);
  j["report_digest"] = report_digest(report);
  return j;
}

MetricsReport report_from_json(const json& j) {
  try {
    MetricsReport r;
    r.tool_version = j.at("tool_version").get<std::string>();
    r.config_digest = j.at("config_digest").get<std::string>();
    r.master_seed = j.at("master_seed").get<std::uint64_t>();
    r.memorization_converged = j.at("memorization").at("converged").get<bool>();
    r.memorization_epochs = j.at("memorization").at("epochs").get<int>();
    for (const auto& sj : j.at("states")) {
      StateMetrics s;
      s.state = sj.at("state").get<std::string>();
      s.status = sj.at("status").get<std::string>();
      s.error = sj.at("error").get<std::string>();
      s.articles = sj.at("articles").get<std::vector<ArticleMetrics>>();
      s.mean_best_lcs = sj.at("mean_best_lcs").get<double>();
      s.mean_best_lcs_contiguous = sj.at("mean_best_lcs_contiguous").get<double>();
      s.mean_best_ed = sj.at("mean_best_ed").get<double>();
      s.mean_best_rouge2 = sj.at("mean_best_rouge2").get<double>();
      s.retain_perplexity = sj.at("retain_perplexity").get<double>();
      s.maintain_drift = sj.at("maintain_drift").get<double>();
      if (!sj.at("unmemorize").is_null()) s.unmemorize = sj.at("unmemorize").get<UnmemorizeSummary>();
      s.acr = sj.at("acr").get<std::vector<AcrEntry>>();
      r.states.push_back(std::move(s));
    }
    return r;
  } catch (const json::exception& e) {
    fail(ErrorKind::kSchema, std::string("malformed report: ") + e.what());
  }
}

StageError::StageError(std::string stage, const Error& cause)
    : Error(cause.kind(), "stage " + stage + ": " + cause.what()), stage_(std::move(stage)) {}

fs::path make_run_dir(const fs::path& out, const std::string& digest) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create " + out.string() + ": " + ec.message());
  const std::string stem = "run-" + digest.substr(0, 12) + "-";
  for (int n = 0;; ++n) {
    const auto dir = out / (stem + std::to_string(n));
    if (fs::create_directory(dir, ec)) return dir;
    if (ec) fail(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());
  }
}

Workspace build_workspace(const ExperimentConfig& cfg) {
  Workspace ws;
  if (!cfg.corpus_dir.empty()) {
    require(fs::is_directory(cfg.corpus_dir), ErrorKind::kConfig, "corpus_dir does not exist: " + cfg.corpus_dir);
    ws.corpus = load_corpus(cfg.corpus_dir);
  } else {
    ws.corpus = build_corpus(cfg.corpus);
  }
  check_disjoint(ws.corpus);
  const auto texts = ws.corpus.all_texts();
  ws.vocab = build_vocab(texts);
  ws.forget = encode_articles(ws.vocab, ws.corpus.forget_set);
  ws.retain = encode_articles(ws.vocab, ws.corpus.retain_set);
  ws.heldout = encode_articles(ws.vocab, ws.corpus.heldout_set);
  ws.organic = encode_articles(ws.vocab, ws.corpus.organic_set);
  return ws;
}

ModelConfig sized_model(const ExperimentConfig& cfg, const Workspace& ws) {
  ModelConfig mc = cfg.model;
  mc.vocab_size = static_cast<int>(ws.vocab.size());
  std::size_t longest = 0;
  for (const auto* set : {&ws.forget, &ws.retain, &ws.heldout, &ws.organic})
    for (const auto& s : *set) longest = std::max(longest, s.ids.size());
  require(static_cast<int>(longest) <= mc.context_len, ErrorKind::kConfig,
          "context_len " + std::to_string(mc.context_len) + " is shorter than the longest article (" +
              std::to_string(longest) + " tokens)");
  mc.validate();
  return mc;
}

void check_vocab(const Model& model, const Workspace& ws) {
  require(model.config().vocab_size == static_cast<int>(ws.vocab.size()), ErrorKind::kConfig,
          "checkpoint vocabulary size " + std::to_string(model.config().vocab_size) +
              " does not match the corpus vocabulary (" + std::to_string(ws.vocab.size()) + ")");
}

namespace {

Model do_pretrain(const ExperimentConfig& cfg, const Workspace& ws, const fs::path& dir) {
  Model model = init_model(sized_model(cfg, ws));
  const auto rep = pretrain(model, ws.retain, cfg.pretrain, ws.heldout);
  if (!dir.empty()) {
    write_training_log(dir / "pretrain_log.csv", rep.log);
    save(model, dir / "pretrained.ckpt");
  }
  return model;
}

MemorizeReport do_memorize(Model& model, const ExperimentConfig& cfg, const Workspace& ws, const fs::path& dir) {
  auto rep = memorize(model, ws.forget, cfg.criterion, cfg.memorize);
  if (!dir.empty()) {
    write_training_log(dir / "memorize_log.csv", rep.log);
    save(model, dir / "memorized.ckpt");
  }
  return rep;
}

struct CellOutcome {
  StateMetrics state;
  UnmemorizeReport report;
  std::vector<ProbeResult> probes;
};

CellOutcome unmemorize_cell(const Model& memorized, const Workspace& ws, const ExperimentConfig& cfg,
                            const ObliviateConfig& oc, std::string name, const fs::path& dir, const std::string& tag,
                            bool organic = false) {
  const auto& seqs = organic ? ws.organic : ws.forget;
  const auto& articles = organic ? ws.corpus.organic_set : ws.corpus.forget_set;
  const auto reference = clone_reference(memorized);
  const auto digest_before = parameter_digest(reference.model());
  const auto shapes = token_shapes(ws.vocab);
  const auto prepared = prepare_articles(reference, seqs, oc, shapes);
  Model live = memorized;
  CellOutcome out;
  out.report = unmemorize(live, prepared, oc);
  require(parameter_digest(reference.model()) == digest_before, ErrorKind::kIntegrity,
          "reference model changed during unmemorize");
  out.probes = probe_articles(live, ws, cfg.probe, organic);
  out.state = state_from_probe(std::move(name), out.probes);
  out.state.retain_perplexity = perplexity(live, ws.heldout);
  out.state.maintain_drift = out.report.maintain_drift;
  int targets = 0;
  for (const auto& p : prepared) targets += static_cast<int>(p.selection.targets.size());
  out.state.unmemorize = UnmemorizeSummary{out.report.steps_run, to_string(out.report.stop_reason),
                                           out.report.final_max_target_prob, targets};
  if (!dir.empty()) {
    write_probe_csv(dir / ("probe_" + tag + ".csv"), out.probes);
    write_losses_csv(dir / ("losses_" + tag + ".csv"), out.report.losses);
    write_json(dir / ("unmemorize_" + tag + ".json"), out.report);
    json sel = json::array();
    for (std::size_t i = 0; i < prepared.size(); ++i)
      sel.push_back({{"article", articles[i].id}, {"selection", prepared[i].selection}});
    write_json(dir / ("selection_" + tag + ".json"), sel);
    save(live, dir / (tag + ".ckpt"));
  }
  return out;
}

}  // namespace

Model train_memorized(const ExperimentConfig& cfg, const Workspace& ws, const fs::path& dir,
                      MemorizeReport* memorize_report) {
  Model model = stage("pretrain", [&] { return do_pretrain(cfg, ws, dir); });
  auto rep = stage("memorize", [&] { return do_memorize(model, cfg, ws, dir); });
  if (memorize_report) *memorize_report = std::move(rep);
  return model;
}

std::vector<ProbeResult> probe_articles(const Model& model, const Workspace& ws, const ProbeProtocol& protocol,
                                        bool organic) {
  const auto& seqs = organic ? ws.organic : ws.forget;
  const auto& articles = organic ? ws.corpus.organic_set : ws.corpus.forget_set;
  std::vector<ProbeResult> out;
  for (std::size_t i = 0; i < seqs.size(); ++i)
    out.push_back(probe_sweep(model, ws.vocab, seqs[i], protocol, articles[i].id));
  return out;
}

std::vector<AcrEntry> acr_articles(const Model& model, const Workspace& ws, const ExperimentConfig& cfg) {
  std::vector<AcrEntry> out;
  for (std::size_t i = 0; i < ws.corpus.forget_set.size(); ++i) {
    const auto& article = ws.corpus.forget_set[i];
    const auto text = leading_sentences(article.text, cfg.acr_sentences);
    const auto control = rephrase(text, derive_seed(cfg.acr.seed, 1000 + i), &ws.vocab);
    for (const auto& [kind, body] : {std::pair{"memorized", text}, std::pair{"control", control}}) {
      auto ids = encode(ws.vocab, body).ids;
      require(static_cast<int>(ids.size()) > cfg.acr_lead_tokens, ErrorKind::kConfig,
              "ACR target of " + article.id + " is not longer than acr_lead_tokens");
      ids.erase(ids.begin(), ids.begin() + cfg.acr_lead_tokens);
      AcrConfig ac = cfg.acr;
      ac.seed = derive_seed(cfg.acr.seed, i);
      const auto r = compress(model, ids, ac);
      out.push_back(AcrEntry{article.id, kind, static_cast<int>(ids.size()),
                             r.best_prefix ? static_cast<int>(r.best_prefix->size()) : 0, r.elicited, r.acr});
    }
  }
  return out;
}

MetricsReport run_pipeline(const ExperimentConfig& input, fs::path* run_dir) {
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  json timings;
  auto lap = [&](const char* name, Clock::time_point since) {
    timings[name] = std::chrono::duration<double>(Clock::now() - since).count();
  };

  const auto cfg = stage("config", [&] {
    input.validate();
    auto c = resolve_seeds(input);
    c.validate();
    return c;
  });
  MetricsReport report;
  report.config_digest = config_digest(cfg);
  report.master_seed = cfg.seed;

  const auto dir = stage("config", [&] { return make_run_dir(cfg.out_dir, report.config_digest); });
  if (run_dir) *run_dir = dir;
  write_json(dir / "config.json", json(cfg));

  auto t = Clock::now();
  const auto ws = stage("corpus", [&] {
    auto w = build_workspace(cfg);
    write_corpus(w.corpus, dir / "corpus");
    return w;
  });
  lap("corpus", t);

  t = Clock::now();
  MemorizeReport mem;
  const Model memorized = train_memorized(cfg, ws, dir, &mem);
  report.memorization_converged = mem.converged;
  report.memorization_epochs = mem.epochs_run;
  lap("train", t);

  t = Clock::now();
  auto before = stage("probe_before", [&] {
    auto probes = probe_articles(memorized, ws, cfg.probe);
    write_probe_csv(dir / "probe_memorized.csv", probes);
    write_json(dir / "probe_memorized.json", probes);
    return state_from_probe("memorized", probes);
  });
  before.retain_perplexity = stage("perplexity", [&] { return perplexity(memorized, ws.heldout); });
  lap("probe_before", t);

  t = Clock::now();
  auto cell = stage("unmemorize", [&] {
    return unmemorize_cell(memorized, ws, cfg, cfg.obliviate, "unmemorized", dir, "unmemorized");
  });
  write_json(dir / "probe_unmemorized.json", cell.probes);
  lap("unmemorize_and_probe", t);

  if (cfg.run_acr) {
    t = Clock::now();
    stage("acr", [&] {
      before.acr = acr_articles(memorized, ws, cfg);
      const Model after = load(dir / "unmemorized.ckpt");
      cell.state.acr = acr_articles(after, ws, cfg);
      write_json(dir / "acr.json", {{"memorized", before.acr}, {"unmemorized", cell.state.acr}});
      return 0;
    });
    lap("acr", t);
  }

  report.states = {before, cell.state};

  if (!ws.organic.empty()) {
    t = Clock::now();
    // Second family: a fresh copy of the pretrained model, memorized only to the shallow preset.
    Model shallow = load(dir / "pretrained.ckpt");
    stage("memorize", [&] {
      const auto rep = memorize(shallow, ws.organic, cfg.organic_criterion, cfg.memorize);
      write_training_log(dir / "organic_memorize_log.csv", rep.log);
      save(shallow, dir / "organic_memorized.ckpt");
      return 0;
    });
    auto organic_before = stage("probe_before", [&] {
      auto probes = probe_articles(shallow, ws, cfg.probe, true);
      write_probe_csv(dir / "probe_organic_memorized.csv", probes);
      return state_from_probe("organic_memorized", probes);
    });
    organic_before.retain_perplexity = stage("perplexity", [&] { return perplexity(shallow, ws.heldout); });
    auto organic_cell = stage("unmemorize", [&] {
      return unmemorize_cell(shallow, ws, cfg, cfg.obliviate, "organic_unmemorized", dir, "organic_unmemorized", true);
    });
    report.states.push_back(std::move(organic_before));
    report.states.push_back(std::move(organic_cell.state));
    lap("organic", t);
  }
  stage("report", [&] {
    write_report(report, dir);
    return 0;
  });
  lap("total", t0);
  write_json(dir / "timings.json", timings);
  return report;
}

AblationAxis parse_axis(const std::string& name) {
  if (name == "stride") return AblationAxis::kStride;
  if (name == "topk" || name == "top_k") return AblationAxis::kTopK;
  if (name == "lambda_m") return AblationAxis::kLambdaM;
  if (name == "candidate_strategy") return AblationAxis::kCandidateStrategy;
  fail(ErrorKind::kInvalidArgument, "unknown ablation axis: " + name);
}

const char* to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::kStride: return "stride";
    case AblationAxis::kTopK: return "topk";
    case AblationAxis::kLambdaM: return "lambda_m";
    case AblationAxis::kCandidateStrategy: return "candidate_strategy";
  }
  return "?";
}

MetricsReport run_ablation(const ExperimentConfig& input, AblationAxis axis, const fs::path& memorized_checkpoint,
                           fs::path* run_dir) {
  const auto cfg = stage("config", [&] {
    input.validate();
    auto c = resolve_seeds(input);
    const auto& g = c.ablation;
    const bool empty = (axis == AblationAxis::kStride && g.stride.empty()) ||
                       (axis == AblationAxis::kTopK && g.top_k.empty()) ||
                       (axis == AblationAxis::kLambdaM && g.lambda_m.empty()) ||
                       (axis == AblationAxis::kCandidateStrategy && g.candidate_strategy.empty());
    require(!empty, ErrorKind::kConfig, std::string("ablation grid for ") + to_string(axis) + " is empty");
    if (!memorized_checkpoint.empty())
      require(fs::exists(memorized_checkpoint), ErrorKind::kConfig,
              "checkpoint does not exist: " + memorized_checkpoint.string());
    return c;
  });

  MetricsReport report;
  report.config_digest = config_digest(cfg);
  report.master_seed = cfg.seed;
  const auto dir = stage("config", [&] { return make_run_dir(cfg.out_dir, report.config_digest); });
  if (run_dir) *run_dir = dir;
  json cj = cfg;
  cj["ablation_axis"] = to_string(axis);
  write_json(dir / "config.json", cj);

  const auto ws = stage("corpus", [&] { return build_workspace(cfg); });
  Model memorized = [&] {
    if (!memorized_checkpoint.empty()) {
      return stage("checkpoint", [&] {
        Model m = load(memorized_checkpoint);
        check_vocab(m, ws);
        return m;
      });
    }
    MemorizeReport mem;
    Model m = train_memorized(cfg, ws, dir, &mem);
    report.memorization_converged = mem.converged;
    report.memorization_epochs = mem.epochs_run;
    return m;
  }();
  if (!memorized_checkpoint.empty()) {
    report.memorization_converged = true;
    report.memorization_epochs = memorized.meta().steps;
  }

  auto base = stage("probe_before", [&] {
    auto probes = probe_articles(memorized, ws, cfg.probe);
    write_probe_csv(dir / "probe_memorized.csv", probes);
    return state_from_probe("memorized", probes);
  });
  base.retain_perplexity = perplexity(memorized, ws.heldout);
  report.states.push_back(base);

  std::vector<std::pair<std::string, ObliviateConfig>> cells;
  const auto& g = cfg.ablation;
  switch (axis) {
    case AblationAxis::kStride:
      for (int s : g.stride) cells.emplace_back("stride=" + std::to_string(s), cfg.obliviate).second.stride = s;
      break;
    case AblationAxis::kTopK:
      for (int k : g.top_k) cells.emplace_back("topk=" + std::to_string(k), cfg.obliviate).second.top_k = k;
      break;
    case AblationAxis::kLambdaM:
      for (double l : g.lambda_m) cells.emplace_back("lambda_m=" + fmt(l), cfg.obliviate).second.lambda_m = l;
      break;
    case AblationAxis::kCandidateStrategy:
      for (auto c : g.candidate_strategy)
        cells.emplace_back(std::string("candidate_strategy=") + to_string(c), cfg.obliviate).second.candidate_strategy =
            c;
      break;
  }

  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& [name, oc] = cells[i];
    try {
      auto cell = unmemorize_cell(memorized, ws, cfg, oc, name, dir, "cell" + std::to_string(i));
      report.states.push_back(std::move(cell.state));
    } catch (const Error& e) {
      StateMetrics failed;
      failed.state = name;
      failed.status = "failed";
      failed.error = std::string(to_string(e.kind())) + ": " + e.what();
      report.states.push_back(std::move(failed));
    }
  }
  stage("report", [&] {
    write_report(report, dir);
    return 0;
  });
  return report;
}

void write_report(const MetricsReport& report, const fs::path& dir) {
  const json j = report_json(report);
  const auto errors = validate_json(load_report_schema(), j);
  if (!errors.empty()) fail(ErrorKind::kSchema, "report fails its schema: " + errors.front());
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());
  write_json(dir / "report.json", j);

  const double base_ppl = report.states.empty() ? 0.0 : report.states.front().retain_perplexity;
  std::ostringstream csv;
  csv << "state,status,mean_best_lcs,mean_best_lcs_contiguous,mean_best_ed,mean_best_rouge2,retain_perplexity,"
         "perplexity_drift,maintain_drift,steps_run,stop_reason\n";
  for (const auto& s : report.states) {
    const double drift = base_ppl > 0 && s.status == "ok" ? s.retain_perplexity / base_ppl - 1.0 : 0.0;
    csv << s.state << ',' << s.status << ',' << fmt(s.mean_best_lcs) << ',' << fmt(s.mean_best_lcs_contiguous) << ','
        << fmt(s.mean_best_ed) << ',' << fmt(s.mean_best_rouge2) << ',' << fmt(s.retain_perplexity) << ','
        << fmt(drift) << ',' << fmt(s.maintain_drift) << ',' << (s.unmemorize ? s.unmemorize->steps_run : 0) << ','
        << (s.unmemorize ? s.unmemorize->stop_reason : "") << '\n';
  }
  write_text(dir / "comparison.csv", csv.str());
}

}  // namespace unmemo
