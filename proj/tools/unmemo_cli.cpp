// Command-line front end. Exit code 0 on success, otherwise the numeric
// value of the ErrorKind that aborted the command (1 for anything else).

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "unmemo/harness.hpp"
#include "unmemo/json_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace unmemo;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "experiment config (JSON)");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--checkpoint", f.checkpoint, "model checkpoint");
}

ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig cfg = f.config.empty() ? ExperimentConfig{} : load_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.out_dir = f.out;
  cfg.validate();
  return resolve_seeds(cfg);
}

fs::path out_dir(const ExperimentConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create " + cfg.out_dir + ": " + ec.message());
  return cfg.out_dir;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

Model load_checked(const std::string& path, const fs::path& fallback, const Workspace& ws) {
  const fs::path p = path.empty() ? fallback : fs::path(path);
  require(fs::exists(p), ErrorKind::kConfig, "checkpoint not found: " + p.string());
  Model m = load(p);
  check_vocab(m, ws);
  return m;
}

int cmd_corpus_gen(const CommonFlags& f) {
  const auto cfg = resolve(f);
  const auto ws = build_workspace(cfg);
  const auto dir = out_dir(cfg) / "corpus";
  write_corpus(ws.corpus, dir);
  std::cout << json{{"corpus_dir", dir.string()},
                    {"forget", ws.corpus.forget_set.size()},
                    {"retain", ws.corpus.retain_set.size()},
                    {"heldout", ws.corpus.heldout_set.size()},
                    {"vocab_size", ws.vocab.size()}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_pretrain(const CommonFlags& f) {
  const auto cfg = resolve(f);
  const auto ws = build_workspace(cfg);
  Model model = init_model(sized_model(cfg, ws));
  const auto rep = pretrain(model, ws.retain, cfg.pretrain, ws.heldout);
  const auto dir = out_dir(cfg);
  write_training_log(dir / "pretrain_log.csv", rep.log);
  save(model, dir / "pretrained.ckpt");
  std::cout << json{{"checkpoint", (dir / "pretrained.ckpt").string()},
                    {"initial_loss", rep.initial_loss},
                    {"final_loss", rep.final_loss},
                    {"heldout_perplexity", rep.heldout_perplexity}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_memorize(const CommonFlags& f) {
  const auto cfg = resolve(f);
  const auto ws = build_workspace(cfg);
  const auto dir = out_dir(cfg);
  Model model = load_checked(f.checkpoint, dir / "pretrained.ckpt", ws);
  const auto rep = memorize(model, ws.forget, cfg.criterion, cfg.memorize);
  write_training_log(dir / "memorize_log.csv", rep.log);
  save(model, dir / "memorized.ckpt");
  std::cout << json{{"checkpoint", (dir / "memorized.ckpt").string()},
                    {"converged", rep.converged},
                    {"epochs_run", rep.epochs_run},
                    {"min_fraction", rep.min_fraction.empty() ? 0.0 : rep.min_fraction.back()}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_unmemorize(const CommonFlags& f) {
  const auto cfg = resolve(f);
  const auto ws = build_workspace(cfg);
  const auto dir = out_dir(cfg);
  Model live = load_checked(f.checkpoint, dir / "memorized.ckpt", ws);
  const auto reference = clone_reference(live);
  const auto shapes = token_shapes(ws.vocab);
  const auto prepared = prepare_articles(reference, ws.forget, cfg.obliviate, shapes);
  json sel = json::array();
  for (std::size_t i = 0; i < prepared.size(); ++i)
    sel.push_back({{"article", ws.corpus.forget_set[i].id}, {"selection", prepared[i].selection}});
  write_json(dir / "selection.json", sel);
  const auto rep = unmemorize(live, prepared, cfg.obliviate);
  write_json(dir / "unmemorize_report.json", rep);
  save(live, dir / "unmemorized.ckpt");
  std::cout << json{{"checkpoint", (dir / "unmemorized.ckpt").string()},
                    {"steps_run", rep.steps_run},
                    {"stop_reason", rep.stop_reason},
                    {"final_max_target_prob", rep.final_max_target_prob},
                    {"maintain_drift", rep.maintain_drift}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_probe(const CommonFlags& f) {
  const auto cfg = resolve(f);
  const auto ws = build_workspace(cfg);
  const auto dir = out_dir(cfg);
  require(!f.checkpoint.empty(), ErrorKind::kInvalidArgument, "probe needs --checkpoint");
  const Model model = load_checked(f.checkpoint, {}, ws);
  const auto results = probe_articles(model, ws, cfg.probe);
  write_probe_csv(dir / "probe.csv", results);
  write_json(dir / "probe.json", results);
  json summary = json::array();
  for (const auto& r : results)
    summary.push_back({{"article", r.article_id},
                       {"best_lcs", r.best_lcs},
                       {"best_lcs_contiguous", r.best_lcs_contiguous},
                       {"best_ed", r.best_ed},
                       {"best_rouge2", r.best_rouge2}});
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_acr(const CommonFlags& f) {
  const auto cfg = resolve(f);
  const auto ws = build_workspace(cfg);
  const auto dir = out_dir(cfg);
  require(!f.checkpoint.empty(), ErrorKind::kInvalidArgument, "acr needs --checkpoint");
  const Model model = load_checked(f.checkpoint, {}, ws);
  const auto entries = acr_articles(model, ws, cfg);
  json j = json::array();
  for (const auto& e : entries)
    j.push_back({{"id", e.id}, {"kind", e.kind}, {"target_len", e.target_len}, {"prefix_len", e.prefix_len},
                 {"elicited", e.elicited}, {"acr", e.acr}});
  write_json(dir / "acr.json", j);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_ablate(const CommonFlags& f, const std::string& axis_name) {
  const auto axis = parse_axis(axis_name);
  ExperimentConfig cfg = f.config.empty() ? ExperimentConfig{} : load_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.out_dir = f.out;
  fs::path run_dir;
  const auto report = run_ablation(cfg, axis, f.checkpoint, &run_dir);
  std::cout << json{{"run_dir", run_dir.string()}, {"report_digest", report_digest(report)},
                    {"cells", report.states.size() - 1}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_pipeline(const CommonFlags& f) {
  ExperimentConfig cfg = f.config.empty() ? ExperimentConfig{} : load_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.out_dir = f.out;
  fs::path run_dir;
  const auto report = run_pipeline(cfg, &run_dir);
  std::cout << json{{"run_dir", run_dir.string()}, {"report_digest", report_digest(report)}}.dump(2) << "\n";
  return 0;
}

int cmd_report(const std::string& target) {
  fs::path path = target;
  if (fs::is_directory(path)) path /= "report.json";
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::kSchema, std::string("report is not JSON: ") + e.what());
  }
  const auto errors = validate_json(load_report_schema(), j);
  if (!errors.empty()) fail(ErrorKind::kSchema, "report fails its schema: " + errors.front());
  const auto report = report_from_json(j);
  require(report_digest(report) == j.at("report_digest").get<std::string>(), ErrorKind::kIntegrity,
          "report digest does not match its content");
  for (const auto& s : report.states) {
    auto copy = s;
    copy.aggregate();
    require(copy.articles.empty() || std::abs(copy.mean_best_lcs - s.mean_best_lcs) < 1e-9, ErrorKind::kIntegrity,
            "averages of state " + s.state + " do not match its articles");
  }
  std::printf("%-34s %-7s %9s %9s %9s %9s %10s %9s\n", "state", "status", "lcs", "lcs_cont", "ed", "rouge2",
              "ppl", "drift");
  for (const auto& s : report.states)
    std::printf("%-34s %-7s %9.2f %9.2f %9.2f %9.3f %10.3f %9.4f\n", s.state.c_str(), s.status.c_str(),
                s.mean_best_lcs, s.mean_best_lcs_contiguous, s.mean_best_ed, s.mean_best_rouge2, s.retain_perplexity,
                s.maintain_drift);
  std::printf("report_digest %s\n", j.at("report_digest").get<std::string>().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unmemo: memorize, unmemorize and probe small language models"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto* corpus = app.add_subcommand("corpus", "corpus tools");
  corpus->require_subcommand(1);
  auto* gen = corpus->add_subcommand("gen", "generate and write the article corpus");
  add_common(gen, flags);

  auto* train = app.add_subcommand("train", "training stages");
  train->require_subcommand(1);
  auto* pre = train->add_subcommand("pretrain", "pretrain on the retain split");
  auto* mem = train->add_subcommand("memorize", "fine-tune until the forget split is memorized");
  add_common(pre, flags);
  add_common(mem, flags);

  auto* unm = app.add_subcommand("unmemorize", "run unmemorization on a memorized checkpoint");
  auto* probe = app.add_subcommand("probe", "prefix-sweep memorization probe");
  auto* acr = app.add_subcommand("acr", "adversarial compression ratio");
  auto* ablate = app.add_subcommand("ablate", "ablation grid over one axis");
  std::string axis;
  ablate->add_option("axis", axis, "stride | topk | lambda_m | candidate_strategy")->required();
  auto* pipe = app.add_subcommand("pipeline", "full experiment");
  for (auto* c : {unm, probe, acr, ablate, pipe}) add_common(c, flags);

  auto* rep = app.add_subcommand("report", "validate and summarize a report");
  std::string report_path;
  rep->add_option("path", report_path, "report.json or its run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::kInvalidArgument);
  }

  try {
    if (gen->parsed()) return cmd_corpus_gen(flags);
    if (pre->parsed()) return cmd_pretrain(flags);
    if (mem->parsed()) return cmd_memorize(flags);
    if (unm->parsed()) return cmd_unmemorize(flags);
    if (probe->parsed()) return cmd_probe(flags);
    if (acr->parsed()) return cmd_acr(flags);
    if (ablate->parsed()) return cmd_ablate(flags, axis);
    if (pipe->parsed()) return cmd_pipeline(flags);
    if (rep->parsed()) return cmd_report(report_path);
  } catch (const StageError& e) {
    std::cerr << "error [" << to_string(e.kind()) << "] " << e.what() << "\n";
    return e.exit_code();
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.kind()) << "] " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
