#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "unmemo/error.hpp"
#include "unmemo/harness.hpp"
#include "unmemo/json_io.hpp"
#include "unmemo/rng.hpp"

using namespace unmemo;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("unmemo_harness_" + name);
  fs::remove_all(p);
  return p;
}

// A pipeline small enough to run in a few seconds.
ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c;
  c.corpus.forget_count = 2;
  c.corpus.forget_words = 40;
  c.corpus.retain_count = 6;
  c.corpus.retain_words = 40;
  c.corpus.heldout_count = 2;
  c.model = {.n_layers = 1, .n_heads = 2, .d_model = 16, .d_ff = 32, .context_len = 96};
  c.pretrain = {.learning_rate = 3e-3, .steps = 20, .batch_size = 2, .window = 32};
  c.memorize = {.learning_rate = 1e-2, .epochs = 5, .batch_size = 2};
  c.criterion.prefix_len = 4;
  c.obliviate.max_steps = 5;
  c.obliviate.learning_rate = 1e-3;
  c.probe.offsets = {0, 10};
  c.probe.prefix_lengths = {4};
  c.probe.temperature_mode = false;
  c.acr.max_prefix_len = 2;
  c.acr.iters_per_len = 1;
  c.acr.candidates_per_position = 4;
  c.acr_sentences = 2;
  c.ablation.stride = {2, 5};
  c.out_dir = out.string();
  c.seed = 3;
  return c;
}

MetricsReport sample_report() {
  MetricsReport r;
  r.config_digest = "abc";
  r.master_seed = 9;
  r.memorization_converged = true;
  r.memorization_epochs = 12;
  StateMetrics s;
  s.state = "memorized";
  s.articles = {{"f0", 50, 40, 30, 5, 0.8, 0.8, 0.1}, {"f1", 60, 20, 10, 25, 0.4, 0.33, 0.4}};
  s.retain_perplexity = 40.0;
  s.acr = {{"f0", "memorized", 30, 3, true, 10.0}, {"c0", "control", 30, 0, false, 0.0}};
  s.aggregate();
  StateMetrics u = s;
  u.state = "unmemorized";
  u.unmemorize = UnmemorizeSummary{10, "threshold", 0.01, 20};
  u.maintain_drift = 0.02;
  u.aggregate();
  r.states = {s, u};
  return r;
}

}  // namespace

TEST_CASE("seed fan-out gives each stage its own stream") {
  ExperimentConfig c;
  c.seed = 42;
  const auto r = resolve_seeds(c);
  std::set<std::uint64_t> seeds{r.corpus.seed, r.model.init_seed, r.pretrain.seed, r.memorize.seed, r.probe.seed,
                                r.acr.seed};
  CHECK(seeds.size() == 6u);
  CHECK(r.corpus.seed == derive_seed(42, 0));
  CHECK(r.acr.seed == derive_seed(42, 5));
  CHECK(resolve_seeds(c).pretrain.seed == r.pretrain.seed);
}

TEST_CASE("config digest ignores output paths and tracks content") {
  ExperimentConfig a, b;
  b.out_dir = "elsewhere";
  CHECK(config_digest(a) == config_digest(b));
  b.obliviate.stride = 7;
  CHECK(config_digest(a) != config_digest(b));
}

TEST_CASE("config files: partial JSON falls back to defaults; bad files map to config errors") {
  const auto dir = scratch("cfg");
  fs::create_directories(dir);
  {
    std::ofstream(dir / "ok.json") << R"({"seed": 5, "obliviate": {"stride": 3}})";
    std::ofstream(dir / "bad.json") << "{ not json";
    std::ofstream(dir / "missing_corpus.json") << R"({"corpus_dir": "/definitely/not/here"})";
  }
  const auto c = load_config(dir / "ok.json");
  CHECK(c.seed == 5u);
  CHECK(c.obliviate.stride == 3);
  CHECK(c.obliviate.top_k == ObliviateConfig{}.top_k);

  auto kind_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::kInvalidArgument;
  };
  CHECK(kind_of([&] { load_config(dir / "bad.json"); }) == ErrorKind::kConfig);
  CHECK(kind_of([&] { load_config(dir / "absent.json"); }) == ErrorKind::kConfig);
  CHECK(kind_of([&] { load_config(dir / "missing_corpus.json").validate(); }) == ErrorKind::kConfig);
  fs::remove_all(dir);
}

TEST_CASE("state averages equal recomputation from the articles") {
  const auto r = sample_report();
  const auto& s = r.states[0];
  CHECK(s.mean_best_lcs == doctest::Approx(30.0));
  CHECK(s.mean_best_lcs_contiguous == doctest::Approx(20.0));
  CHECK(s.mean_best_ed == doctest::Approx(15.0));
  CHECK(s.mean_best_rouge2 == doctest::Approx(0.6));
  CHECK(r.find("unmemorized") != nullptr);
  CHECK(r.find("nope") == nullptr);
}

TEST_CASE("report JSON validates, round-trips and has a content digest") {
  const auto r = sample_report();
  const auto j = report_json(r);
  const auto schema = load_report_schema();
  CHECK(validate_json(schema, j).empty());
  CHECK(j.at("report_digest") == report_digest(r));

  const auto back = report_from_json(j);
  CHECK(report_json(back).dump() == j.dump());

  auto changed = r;
  changed.states[1].maintain_drift = 0.03;
  CHECK(report_digest(changed) != report_digest(r));
}

TEST_CASE("schema validator rejects malformed reports") {
  const auto schema = load_report_schema();
  auto j = report_json(sample_report());
  auto missing = j;
  missing.erase("config_digest");
  CHECK(!validate_json(schema, missing).empty());
  auto extra = j;
  extra["surprise"] = 1;
  CHECK(!validate_json(schema, extra).empty());
  auto wrong_type = j;
  wrong_type["master_seed"] = "nine";
  CHECK(!validate_json(schema, wrong_type).empty());
  auto bad_enum = j;
  bad_enum["states"][0]["status"] = "maybe";
  CHECK(!validate_json(schema, bad_enum).empty());
  auto bad_kind = j;
  bad_kind["states"][0]["acr"][0]["kind"] = "other";
  CHECK(!validate_json(schema, bad_kind).empty());
}

TEST_CASE("ablation axis names") {
  CHECK(parse_axis("stride") == AblationAxis::kStride);
  CHECK(parse_axis("topk") == AblationAxis::kTopK);
  CHECK(parse_axis("top_k") == AblationAxis::kTopK);
  CHECK(parse_axis("lambda_m") == AblationAxis::kLambdaM);
  CHECK(parse_axis("candidate_strategy") == AblationAxis::kCandidateStrategy);
  CHECK_THROWS_AS(parse_axis("depth"), Error);
}

TEST_CASE("run directories are append-only") {
  const auto out = scratch("runs");
  const auto a = make_run_dir(out, "0123456789abcdef");
  const auto b = make_run_dir(out, "0123456789abcdef");
  CHECK(a != b);
  CHECK(fs::is_directory(a));
  CHECK(fs::is_directory(b));
  CHECK(a.filename().string().rfind("run-0123456789ab-", 0) == 0);
  fs::remove_all(out);
}

TEST_CASE("pipeline writes its artifacts and is deterministic") {
  const auto out = scratch("pipeline");
  const auto cfg = tiny_config(out);
  fs::path d1, d2;
  const auto r1 = run_pipeline(cfg, &d1);
  const auto r2 = run_pipeline(cfg, &d2);
  CHECK(d1 != d2);
  CHECK(report_digest(r1) == report_digest(r2));
  for (const char* f : {"report.json", "comparison.csv", "config.json", "pretrained.ckpt", "memorized.ckpt",
                        "unmemorized.ckpt", "probe_memorized.csv", "acr.json", "timings.json"})
    CHECK_MESSAGE(fs::exists(d1 / f), f);
  REQUIRE(r1.find("memorized") != nullptr);
  REQUIRE(r1.find("unmemorized") != nullptr);
  CHECK(r1.find("unmemorized")->unmemorize.has_value());
  CHECK(r1.states[0].articles.size() == 2u);

  std::ifstream in(d1 / "report.json");
  const auto j = json::parse(in);
  CHECK(validate_json(load_report_schema(), j).empty());
  CHECK(j.at("report_digest") == report_digest(r1));

  auto other = cfg;
  other.seed = 4;
  CHECK(report_digest(run_pipeline(other)) != report_digest(r1));
  fs::remove_all(out);
}

TEST_CASE("pseudo-organic articles get their own shallow memorize and unmemorize pass") {
  const auto out = scratch("organic");
  auto cfg = tiny_config(out);
  cfg.corpus.organic_count = 2;
  cfg.corpus.organic_words = 40;
  cfg.run_acr = false;
  fs::path dir;
  const auto r = run_pipeline(cfg, &dir);
  REQUIRE(r.states.size() == 4u);
  CHECK(r.states[2].state == "organic_memorized");
  CHECK(r.states[3].state == "organic_unmemorized");
  CHECK(r.states[2].articles.size() == 2u);
  CHECK(r.states[2].articles[0].id.rfind("organic", 0) == 0);
  CHECK(r.states[3].unmemorize.has_value());
  CHECK(fs::exists(dir / "organic_memorized.ckpt"));
  CHECK(fs::exists(dir / "probe_organic_unmemorized.csv"));
  // The main family is untouched by the extra articles' presence in the report.
  CHECK(r.states[0].articles[0].id.rfind("forget", 0) == 0);
  fs::remove_all(out);
}

TEST_CASE("ablation reuses a checkpoint and reports one state per cell") {
  const auto out = scratch("ablate");
  const auto cfg = tiny_config(out);
  fs::path run;
  run_pipeline(cfg, &run);
  fs::path ab;
  const auto r = run_ablation(cfg, AblationAxis::kStride, run / "memorized.ckpt", &ab);
  REQUIRE(r.states.size() == 3u);
  CHECK(r.states[0].state == "memorized");
  CHECK(r.states[1].state == "stride=2");
  CHECK(r.states[2].state == "stride=5");
  CHECK(fs::exists(ab / "comparison.csv"));

  // A checkpoint from another vocabulary is refused.
  auto other = cfg;
  other.corpus.seed = 99;
  other.corpus.forget_words = 45;
  try {
    run_ablation(other, AblationAxis::kStride, run / "memorized.ckpt");
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfig);
  }
  fs::remove_all(out);
}

TEST_CASE("stage errors keep the cause's kind") {
  const StageError e("probe", Error(ErrorKind::kProtocolInfeasible, "nothing to probe"));
  CHECK(e.kind() == ErrorKind::kProtocolInfeasible);
  CHECK(e.stage() == "probe");
  CHECK(std::string(e.what()).find("probe") != std::string::npos);
}
