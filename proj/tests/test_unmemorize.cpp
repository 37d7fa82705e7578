#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "support.hpp"
#include "unmemo/error.hpp"
#include "unmemo/rng.hpp"
#include "unmemo/unmemorize.hpp"

using namespace unmemo;
using unmemo::testing::micro_config;
using unmemo::testing::random_ids;

namespace {

std::vector<float> random_logits(Rng& rng, int n, double scale) {
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<float>(scale * rng.normal());
  return v;
}

// Restricted KL written out directly from the definitions.
long double kl_oracle(const std::vector<long double>& p, const std::vector<long double>& q) {
  long double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * std::log(p[i] / q[i]);
  return s;
}

std::vector<long double> restricted_softmax(std::span<const float> logits, std::span<const TokenId> support) {
  std::vector<long double> out;
  long double z = 0;
  for (auto id : support) z += std::exp(static_cast<long double>(logits[static_cast<std::size_t>(id)]));
  for (auto id : support) out.push_back(std::exp(static_cast<long double>(logits[static_cast<std::size_t>(id)])) / z);
  return out;
}

TokenSequence framed(std::vector<TokenId> ids) {
  ids.push_back(Vocab::kEos);
  return TokenSequence{std::move(ids), {}};
}

}  // namespace

TEST_CASE("stride pattern") {
  CHECK(stride_positions(12, 2) == std::vector<int>{2, 5, 8, 11});
  CHECK(stride_positions(6, 0) == std::vector<int>{0, 1, 2, 3, 4, 5});
  CHECK(stride_positions(5, 5).empty());
  CHECK(stride_positions(6, 5) == std::vector<int>{5});
  for (int L = 0; L < 60; ++L)
    for (int s = 0; s < 12; ++s) {
      const auto p = stride_positions(L, s);
      CHECK(static_cast<int>(p.size()) == L / (s + 1));
      for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == static_cast<int>(i) * (s + 1) + s);
    }
}

TEST_CASE("forget target on logits 2, 1, 0") {
  const std::vector<float> logits{2.0f, 1.0f, 0.0f};
  ObliviateConfig cfg;
  cfg.top_k = 3;
  cfg.floor_prob = 1e-6;
  const auto t = build_forget_target(logits, cfg);
  REQUIRE(t.support == std::vector<TokenId>{0, 1, 2});
  CHECK(t.target == 0);
  const long double e = std::exp(1.0L);
  const long double keep = 1.0L - 1e-6L;
  CHECK(std::exp(t.log_q[0]) == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(std::exp(t.log_q[1]) == doctest::Approx(static_cast<double>(keep * e / (e + 1))).epsilon(1e-12));
  CHECK(std::exp(t.log_q[2]) == doctest::Approx(static_cast<double>(keep / (e + 1))).epsilon(1e-12));
  // pinned: 0.9999990 * e/(e+1) and 0.9999990 / (e+1)
  CHECK(std::exp(t.log_q[1]) == doctest::Approx(0.7310578475714263).epsilon(1e-12));
  CHECK(std::exp(t.log_q[2]) == doctest::Approx(0.2689411524285737).epsilon(1e-12));
}

TEST_CASE("top-k ties go to the lower id") {
  const std::vector<float> logits{1.0f, 3.0f, 3.0f, 0.5f};
  CHECK(top_k_ids<float>(logits, 3) == std::vector<TokenId>{1, 2, 0});
  ObliviateConfig cfg;
  cfg.top_k = 2;
  CHECK(build_forget_target(logits, cfg).target == 1);
  cfg.top_k = 5;
  CHECK_THROWS_AS(build_forget_target(logits, cfg), Error);
}

TEST_CASE("forget targets are distributions and both losses are non-negative") {
  Rng rng(31);
  ObliviateConfig cfg;
  for (int trial = 0; trial < 1000; ++trial) {
    const int vocab = 12 + static_cast<int>(rng.below(20));
    cfg.top_k = 2 + static_cast<int>(rng.below(9));
    const auto ref = random_logits(rng, vocab, 3.0);
    const auto live = random_logits(rng, vocab, 3.0);
    const auto t = build_forget_target(ref, cfg);
    long double sum = 0;
    for (double lq : t.log_q) sum += std::exp(static_cast<long double>(lq));
    REQUIRE(std::abs(static_cast<double>(sum) - 1.0) < 1e-9);
    REQUIRE(forget_loss<float>(live, t) >= 0.0);
    REQUIRE(forget_loss<float>(live, t, KlDirection::kReverse) >= 0.0);
    REQUIRE(maintain_loss(live, ref, cfg) >= 0.0);
    REQUIRE(std::abs(maintain_loss(ref, ref, cfg)) <= 1e-9);
  }
}

TEST_CASE("forget loss matches a direct KL oracle and vanishes at q") {
  Rng rng(5);
  ObliviateConfig cfg;
  cfg.top_k = 6;
  const auto ref = random_logits(rng, 20, 2.0);
  const auto live = random_logits(rng, 20, 2.0);
  const auto t = build_forget_target(ref, cfg);
  std::vector<long double> q;
  for (double lq : t.log_q) q.push_back(std::exp(static_cast<long double>(lq)));
  const auto p = restricted_softmax(live, t.support);
  CHECK(forget_loss<float>(live, t) == doctest::Approx(static_cast<double>(kl_oracle(p, q))).epsilon(1e-6));
  CHECK(forget_loss<float>(live, t, KlDirection::kReverse) ==
        doctest::Approx(static_cast<double>(kl_oracle(q, p))).epsilon(1e-6));

  // live logits equal to log q on the support: restricted p == q
  std::vector<double> at_q(20, -30.0);
  for (std::size_t i = 0; i < t.support.size(); ++i) at_q[static_cast<std::size_t>(t.support[i])] = t.log_q[i];
  CHECK(std::abs(forget_loss<double>(at_q, t)) < 1e-9);
  CHECK(std::abs(forget_loss<double>(at_q, t, KlDirection::kReverse)) < 1e-9);

  std::vector<float> bad = live;
  bad[static_cast<std::size_t>(t.target)] = std::nanf("");
  try {
    forget_loss<float>(bad, t);
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNumeric);
  }
}

TEST_CASE("forget loss is large on a memorized position and shrinks as the target mass drains") {
  std::vector<float> ref(16, 0.0f);
  ref[7] = 12.0f;
  ObliviateConfig cfg;
  const auto t = build_forget_target(ref, cfg);
  REQUIRE(t.target == 7);
  CHECK(forget_loss<float>(ref, t) > 10.0);

  const double p_ref = std::exp(12.0) / (std::exp(12.0) + 9.0);
  double prev = INFINITY;
  for (int i = 0; i <= 40; ++i) {
    const double frac = i / 40.0;
    const double pt = std::exp(std::log(p_ref) * (1 - frac) + std::log(cfg.floor_prob) * frac);
    std::vector<double> live(16, -40.0);
    live[7] = std::log(pt);
    for (std::size_t j = 1; j < t.support.size(); ++j)
      live[static_cast<std::size_t>(t.support[j])] =
          std::log(1 - pt) + t.log_q[j] - std::log1p(-cfg.floor_prob);
    const double loss = forget_loss<double>(live, t);
    CHECK(loss < prev);
    prev = loss;
  }
  CHECK(prev < 1e-9);
}

TEST_CASE("maintain loss identities and perturbation") {
  Rng rng(8);
  ObliviateConfig cfg;
  const auto ref = random_logits(rng, 30, 2.0);
  CHECK(maintain_loss(ref, ref, cfg) == 0.0);
  auto shifted = ref;
  for (auto& x : shifted) x += 3.5f;  // a constant shift leaves the restricted softmax unchanged
  CHECK(maintain_loss(shifted, ref, cfg) < 1e-9);

  const auto target = build_maintain_target(ref, cfg.top_k);
  for (auto id : target.support) {
    auto live = ref;
    live[static_cast<std::size_t>(id)] += 0.5f;
    CHECK(maintain_loss(live, ref, cfg) > 0.0);
  }
  const auto p = restricted_softmax(ref, target.support);
  auto live = random_logits(rng, 30, 2.0);
  const auto l = restricted_softmax(live, target.support);
  CHECK(maintain_loss(live, ref, cfg) == doctest::Approx(static_cast<double>(kl_oracle(p, l))).epsilon(1e-6));
}

TEST_CASE("loss gradients match finite differences on the logits") {
  Rng rng(12);
  ObliviateConfig cfg;
  cfg.top_k = 5;
  const auto ref = random_logits(rng, 12, 1.5);
  std::vector<double> live(12);
  for (auto& x : live) x = 1.5 * rng.normal();
  const auto ft = build_forget_target(ref, cfg);
  const auto mt = build_maintain_target(ref, cfg.top_k);
  for (auto dir : {KlDirection::kForward, KlDirection::kReverse}) {
    std::vector<double> g(12, 0.0), gm(12, 0.0);
    forget_loss<double>(live, ft, dir, g, 1.0);
    maintain_loss<double>(live, mt, gm, 1.0);
    for (std::size_t i = 0; i < live.size(); ++i) {
      auto up = live, down = live;
      up[i] += 1e-6;
      down[i] -= 1e-6;
      CHECK(g[i] == doctest::Approx((forget_loss<double>(up, ft, dir) - forget_loss<double>(down, ft, dir)) / 2e-6)
                        .epsilon(1e-5)
                        .scale(1e-6));
      CHECK(gm[i] == doctest::Approx((maintain_loss<double>(up, mt) - maintain_loss<double>(down, mt)) / 2e-6)
                         .epsilon(1e-5)
                         .scale(1e-6));
    }
  }
}

TEST_CASE("match-case-and-space keeps alternates of the same shape") {
  const std::vector<std::string> texts{"The cat sat . Dog ran , bird flew"};
  const auto vocab = build_vocab(texts);
  const auto shapes = token_shapes(vocab);
  REQUIRE(shapes.size() == vocab.size());
  CHECK(shapes[static_cast<std::size_t>(*vocab.find("The"))].capitalized);
  CHECK_FALSE(shapes[static_cast<std::size_t>(*vocab.find("."))].leading_space);

  std::vector<float> logits(vocab.size(), 0.0f);
  logits[static_cast<std::size_t>(*vocab.find("cat"))] = 5.0f;
  logits[static_cast<std::size_t>(*vocab.find("Dog"))] = 4.0f;
  logits[static_cast<std::size_t>(*vocab.find("."))] = 3.0f;
  logits[static_cast<std::size_t>(*vocab.find("sat"))] = 2.0f;
  ObliviateConfig cfg;
  cfg.top_k = 3;
  cfg.candidate_strategy = CandidateStrategy::kMatchCaseAndSpace;
  const auto t = build_forget_target(logits, cfg, shapes);
  REQUIRE(t.support.size() == 3);
  for (auto id : t.support) CHECK(shapes[static_cast<std::size_t>(id)] == shapes[static_cast<std::size_t>(t.target)]);
  cfg.candidate_strategy = CandidateStrategy::kPlainTopK;
  const auto plain = build_forget_target(logits, cfg, shapes);
  CHECK(plain.support[1] == *vocab.find("Dog"));
}

TEST_CASE("target selection follows the stride and records exclusions") {
  const auto model = init_model(micro_config(24));
  const auto reference = clone_reference(model);
  const auto seq = framed(random_ids(4, 15, 24));  // 16 tokens, eos last
  ObliviateConfig cfg;
  cfg.stride = 2;
  cfg.top_k = 5;
  auto sel = select_targets(reference, seq, cfg);
  CHECK(sel.candidates == stride_positions(16, 2));
  CHECK(sel.target_positions().size() + sel.excluded.size() == sel.candidates.size());
  const auto logits = reference.forward(seq.ids);
  for (const auto& t : sel.targets) {
    const auto row = logits.row(t.position - 1);
    Eigen::Index arg;
    row.maxCoeff(&arg);
    CHECK(t.forget.target == static_cast<TokenId>(arg));
    CHECK(t.forget.support.size() == 5u);
  }

  cfg.stride = 0;
  sel = select_targets(reference, seq, cfg);
  REQUIRE(!sel.excluded.empty());
  CHECK(sel.excluded.front().position == 0);
  CHECK(sel.excluded.front().reason == ExclusionReason::kSpecialToken);
  const bool eos_excluded = std::any_of(sel.excluded.begin(), sel.excluded.end(), [](const Exclusion& e) {
    return e.position == 15 && e.reason == ExclusionReason::kSpecialToken;
  });
  CHECK(eos_excluded);
  CHECK(sel.targets.size() == 14u);

  // With a cutoff of 0.99 every top-1 >= 1/24 counts as saturated.
  cfg.certainty_cutoff = 0.99;
  sel = select_targets(reference, seq, cfg);
  CHECK(sel.targets.empty());
  for (const auto& e : sel.excluded)
    if (e.position != 0 && e.position != 15) CHECK(e.reason == ExclusionReason::kSaturatedProbability);
}

TEST_CASE("maintain positions exclude every candidate") {
  const auto model = init_model(micro_config(24));
  const auto reference = clone_reference(model);
  const std::vector<TokenSequence> seqs{framed(random_ids(4, 20, 24))};
  ObliviateConfig cfg;
  cfg.stride = 3;
  const auto prepared = prepare_articles(reference, seqs, cfg);
  REQUIRE(prepared.size() == 1);
  const auto& a = prepared[0];
  CHECK(a.maintain_positions.size() == a.maintain.size());
  CHECK(a.maintain_positions.size() + a.selection.candidates.size() == 20u);
  for (int p : a.maintain_positions) {
    CHECK(p >= 1);
    CHECK(std::find(a.selection.candidates.begin(), a.selection.candidates.end(), p) == a.selection.candidates.end());
  }
}

TEST_CASE("total objective gradient matches central differences on a 2-layer d16 model") {
  const auto cfg_model = micro_config(24, 17);
  const auto model = init_model(cfg_model);
  const auto reference = clone_reference(model);
  // Perturbed live copy so the maintain term has a non-zero gradient.
  auto live = model.cast<double>();
  Rng rng(3);
  for (auto& x : live.params()) x += 0.05 * rng.normal();

  const std::vector<TokenSequence> seqs{framed(random_ids(2, 14, 24)), framed(random_ids(9, 11, 24))};
  ObliviateConfig cfg;
  cfg.stride = 2;
  cfg.top_k = 6;
  cfg.lambda_m = 0.7;
  const auto prepared = prepare_articles(reference, seqs, cfg);

  for (auto dir : {KlDirection::kForward, KlDirection::kReverse}) {
    cfg.kl_direction = dir;
    std::vector<double> grads(live.num_params(), 0.0);
    unmemorize_objective<double>(live, prepared, cfg, grads);
    auto params = live.params();
    double worst = 0.0;
    const double h = 1e-6;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double keep = params[i];
      params[i] = keep + h;
      const double up = unmemorize_objective<double>(live, prepared, cfg).total;
      params[i] = keep - h;
      const double down = unmemorize_objective<double>(live, prepared, cfg).total;
      params[i] = keep;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - grads[i]) / std::max({std::abs(fd), std::abs(grads[i]), 1e-6}));
    }
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("unmemorize drives every target below tau and leaves the reference alone") {
  const auto cfg_model = micro_config(24, 4);
  auto live = init_model(cfg_model);
  const auto reference = clone_reference(live);
  const auto ref_digest = parameter_digest(reference.model());
  const std::vector<TokenSequence> seqs{framed(random_ids(5, 20, 24))};
  ObliviateConfig cfg;
  cfg.stride = 2;
  cfg.top_k = 5;
  cfg.stop_threshold = 0.01;
  cfg.learning_rate = 1e-2;
  cfg.max_steps = 400;
  const auto report = unmemorize(live, reference, seqs, cfg);
  CHECK(parameter_digest(reference.model()) == ref_digest);
  REQUIRE(report.stop_reason == StopReason::kThreshold);
  // one loss row per evaluation, including the one that met the threshold
  CHECK(report.steps_run + 1 == static_cast<int>(report.losses.size()));
  CHECK(report.final_max_target_prob < cfg.stop_threshold);
  const auto prepared = prepare_articles(reference, seqs, cfg);
  for (const auto& article : target_probabilities(live, prepared))
    for (const auto& p : article) CHECK(p.prob < cfg.stop_threshold);
  CHECK(report.maintain_drift >= 0.0);
}

TEST_CASE("empty selection leaves the model untouched") {
  auto live = init_model(micro_config(24, 4));
  const auto reference = clone_reference(live);
  const auto before = parameter_digest(live);
  ObliviateConfig cfg;
  cfg.certainty_cutoff = 0.99;
  const std::vector<TokenSequence> seqs{framed(random_ids(5, 20, 24))};
  const auto report = unmemorize(live, reference, seqs, cfg);
  CHECK(report.steps_run == 0);
  CHECK(parameter_digest(live) == before);
}

TEST_CASE("max_steps bounds the run") {
  auto live = init_model(micro_config(24, 4));
  const auto reference = clone_reference(live);
  ObliviateConfig cfg;
  cfg.stride = 1;
  cfg.stop_threshold = 1e-9;
  cfg.floor_prob = 1e-12;
  cfg.learning_rate = 1e-4;
  cfg.max_steps = 3;
  const std::vector<TokenSequence> seqs{framed(random_ids(5, 20, 24))};
  const auto report = unmemorize(live, reference, seqs, cfg);
  CHECK(report.stop_reason == StopReason::kMaxSteps);
  CHECK(report.steps_run == 3);
}

TEST_CASE("config validation") {
  ObliviateConfig cfg;
  CHECK_NOTHROW(cfg.validate(100));
  cfg.top_k = 200;
  CHECK_THROWS_AS(cfg.validate(100), Error);
  cfg = {};
  cfg.stride = -1;
  CHECK_THROWS_AS(cfg.validate(100), Error);
  cfg = {};
  cfg.floor_prob = 0.0;
  CHECK_THROWS_AS(cfg.validate(100), Error);
}
