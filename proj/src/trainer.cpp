#include "unmemo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "unmemo/digest.hpp"
#include "unmemo/error.hpp"
#include "unmemo/optim.hpp"
#include "unmemo/probe.hpp"
#include "unmemo/rng.hpp"

namespace unmemo {

void TrainConfig::validate() const {
  require(learning_rate > 0, ErrorKind::kInvalidArgument, "learning_rate must be > 0");
  require(batch_size >= 1, ErrorKind::kInvalidArgument, "batch_size must be >= 1");
  require(steps >= 0 && epochs >= 0, ErrorKind::kInvalidArgument, "steps/epochs must be >= 0");
  require(window >= 2, ErrorKind::kInvalidArgument, "window must be >= 2");
}

void MemorizationCriterion::validate() const {
  require(prefix_len >= 1, ErrorKind::kInvalidArgument, "prefix_len must be >= 1");
  require(beta > 0 && beta < 1, ErrorKind::kInvalidArgument, "beta must lie in (0, 1)");
  require(greedy_fraction >= 0 && greedy_fraction <= 1, ErrorKind::kInvalidArgument,
          "greedy_fraction must lie in [0, 1]");
}

double sequence_cross_entropy(const LogitMatrix& logits, std::span<const TokenId> ids, LogitMatrix* d_logits,
                              double grad_scale) {
  const auto n = static_cast<Eigen::Index>(ids.size());
  require(logits.rows() == n && n >= 2, ErrorKind::kInvalidArgument, "cross entropy needs >= 2 aligned tokens");
  if (d_logits) d_logits->setZero(logits.rows(), logits.cols());
  const double inv = 1.0 / static_cast<double>(n - 1);
  double total = 0;
  for (Eigen::Index t = 0; t + 1 < n; ++t) {
    const auto row = logits.row(t).cast<double>();
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    const auto target = ids[static_cast<std::size_t>(t + 1)];
    total += lse - row(target);
    if (d_logits) {
      auto drow = d_logits->row(t);
      const double s = grad_scale * inv;
      drow = ((row.array() - lse).exp() * s).cast<float>().matrix();
      drow(target) -= static_cast<float>(s);
    }
  }
  return total * inv;
}

namespace {

void check_finite(double loss, const char* stage, int step) {
  if (!std::isfinite(loss))
    fail(ErrorKind::kTrainingFailure,
         std::string(stage) + " diverged: non-finite loss at step " + std::to_string(step));
}

double mean_nll(const Model& model, std::span<const TokenSequence> corpus) {
  double total = 0;
  std::size_t count = 0;
  for (const auto& seq : corpus) {
    if (seq.ids.size() < 2) continue;
    const auto logits = model.forward(seq.ids);
    total += sequence_cross_entropy(logits, seq.ids, nullptr, 1.0) * static_cast<double>(seq.ids.size() - 1);
    count += seq.ids.size() - 1;
  }
  require(count > 0, ErrorKind::kInvalidArgument, "corpus has no predictable tokens");
  return total / static_cast<double>(count);
}

std::string loss_digest(std::span<const TrainLogRow> rows) {
  Sha256 h;
  for (const auto& r : rows) {
    std::ostringstream line;
    line << r.step << ',' << r.split << ',' << std::setprecision(9) << r.loss << '\n';
    h.update(line.str());
  }
  return h.finish();
}

}  // namespace

double perplexity(const Model& model, std::span<const TokenSequence> corpus) {
  require(!corpus.empty(), ErrorKind::kInvalidArgument, "perplexity needs a non-empty corpus");
  return std::exp(mean_nll(model, corpus));
}

PretrainReport pretrain(Model& model, std::span<const TokenSequence> retain_set, const TrainConfig& cfg,
                        std::span<const TokenSequence> heldout) {
  cfg.validate();
  require(!retain_set.empty(), ErrorKind::kInvalidArgument, "pretrain needs a non-empty retain set");

  std::vector<TokenId> stream;
  for (const auto& seq : retain_set) stream.insert(stream.end(), seq.ids.begin(), seq.ids.end());
  const int window = std::min({cfg.window, model.config().context_len, static_cast<int>(stream.size())});
  require(window >= 2, ErrorKind::kInvalidArgument, "retain stream too short to train on");

  PretrainReport report;
  report.initial_loss = mean_nll(model, retain_set);

  Adam adam(model.num_params(), {cfg.beta1, cfg.beta2, 1e-8, cfg.clip_norm});
  Rng rng(cfg.seed);
  AlignedVector<float> grads(model.num_params());
  ForwardTape<float> tape;
  LogitMatrix dlogits;
  const auto max_start = stream.size() - static_cast<std::size_t>(window);

  for (int step = 0; step < cfg.steps; ++step) {
    std::fill(grads.begin(), grads.end(), 0.0f);
    double loss = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto start = max_start == 0 ? 0 : rng.below(max_start + 1);
      std::span<const TokenId> ids(stream.data() + start, static_cast<std::size_t>(window));
      const auto logits = model.forward(ids, tape);
      loss += sequence_cross_entropy(logits, ids, &dlogits, 1.0 / cfg.batch_size) / cfg.batch_size;
      model.backward(tape, dlogits, grads);
    }
    check_finite(loss, "pretrain", step);
    const double warm = cfg.warmup_steps > 0 ? std::min(1.0, (step + 1.0) / cfg.warmup_steps) : 1.0;
    adam.step<float>(model.params(), grads, cfg.learning_rate * warm);
    report.log.push_back({step, "train", loss, std::exp(loss)});
  }

  report.final_loss = mean_nll(model, retain_set);
  if (!heldout.empty()) {
    const double nll = mean_nll(model, heldout);
    report.heldout_perplexity = std::exp(nll);
    report.log.push_back({cfg.steps, "heldout", nll, report.heldout_perplexity});
  }
  model.meta().steps += cfg.steps;
  model.meta().loss_digest = loss_digest(report.log);
  model.meta().heldout_perplexity = report.heldout_perplexity;
  return report;
}

double greedy_fraction(const Model& model, const TokenSequence& seq, int prefix_len) {
  const int remaining = static_cast<int>(seq.ids.size()) - prefix_len;
  if (remaining <= 0) return 1.0;
  return static_cast<double>(greedy_match_length(model, seq.ids, 0, prefix_len)) / remaining;
}

MemorizeReport memorize(Model& model, std::span<const TokenSequence> forget_set,
                        const MemorizationCriterion& criterion, const TrainConfig& cfg) {
  cfg.validate();
  criterion.validate();
  for (const auto& seq : forget_set) {
    require(static_cast<int>(seq.ids.size()) <= model.config().context_len, ErrorKind::kInvalidArgument,
            "forget article longer than context_len");
    require(static_cast<int>(seq.ids.size()) > criterion.prefix_len, ErrorKind::kInvalidArgument,
            "forget article shorter than the memorization prefix");
  }

  MemorizeReport report;
  if (forget_set.empty()) {
    report.converged = true;
    return report;
  }
  Adam adam(model.num_params(), {cfg.beta1, cfg.beta2, 1e-8, cfg.clip_norm});
  AlignedVector<float> grads(model.num_params());
  ForwardTape<float> tape;
  LogitMatrix dlogits;
  std::vector<std::size_t> order(forget_set.size());
  int step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double epoch_loss = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const auto end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      const double scale = 1.0 / static_cast<double>(end - begin);
      std::fill(grads.begin(), grads.end(), 0.0f);
      double loss = 0;
      for (auto k = begin; k < end; ++k) {
        const auto& ids = forget_set[order[k]].ids;
        const auto logits = model.forward(ids, tape);
        loss += sequence_cross_entropy(logits, ids, &dlogits, scale) * scale;
        model.backward(tape, dlogits, grads);
      }
      check_finite(loss, "memorize", step);
      adam.step<float>(model.params(), grads, cfg.learning_rate);
      epoch_loss += loss * static_cast<double>(end - begin);
      ++step;
    }
    epoch_loss /= static_cast<double>(order.size());
    report.log.push_back({epoch, "forget", epoch_loss, std::exp(epoch_loss)});
    report.epochs_run = epoch + 1;

    double min_frac = 1.0;
    for (const auto& seq : forget_set) min_frac = std::min(min_frac, greedy_fraction(model, seq, criterion.prefix_len));
    report.min_fraction.push_back(min_frac);
    if (min_frac >= criterion.greedy_fraction) {
      report.converged = true;
      break;
    }
  }
  model.meta().steps += step;
  return report;
}

void write_training_log(const std::filesystem::path& path, std::span<const TrainLogRow> rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::kIo, "cannot write training log " + path.string());
  out << "step,split,loss,perplexity\n" << std::setprecision(9);
  for (const auto& r : rows) out << r.step << ',' << r.split << ',' << r.loss << ',' << r.perplexity << '\n';
}

}  // namespace unmemo
