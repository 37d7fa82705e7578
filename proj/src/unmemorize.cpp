#include "unmemo/unmemorize.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "unmemo/error.hpp"
#include "unmemo/optim.hpp"

namespace unmemo {

void ObliviateConfig::validate(std::size_t vocab_size) const {
  require(stride >= 0, ErrorKind::kInvalidArgument, "stride must be >= 0");
  require(top_k >= 2 && static_cast<std::size_t>(top_k) <= vocab_size, ErrorKind::kInvalidArgument,
          "top_k must lie in [2, vocab_size]");
  require(lambda_f >= 0 && lambda_m >= 0, ErrorKind::kInvalidArgument, "loss weights must be >= 0");
  require(stop_threshold > 0 && stop_threshold < 1, ErrorKind::kInvalidArgument, "stop_threshold must lie in (0, 1)");
  require(certainty_cutoff > 0 && certainty_cutoff < 1, ErrorKind::kInvalidArgument,
          "certainty_cutoff must lie in (0, 1)");
  require(floor_prob > 0 && floor_prob < stop_threshold, ErrorKind::kInvalidArgument,
          "floor_prob must lie in (0, stop_threshold)");
  require(learning_rate > 0, ErrorKind::kInvalidArgument, "learning_rate must be > 0");
  require(max_steps >= 0, ErrorKind::kInvalidArgument, "max_steps must be >= 0");
}

const char* to_string(CandidateStrategy s) {
  return s == CandidateStrategy::kPlainTopK ? "plain-top-k" : "match-case-and-space";
}
const char* to_string(KlDirection d) { return d == KlDirection::kForward ? "forward" : "reverse"; }
const char* to_string(ExclusionReason r) {
  return r == ExclusionReason::kSpecialToken ? "special-token" : "saturated-probability";
}
const char* to_string(StopReason r) { return r == StopReason::kThreshold ? "threshold" : "max_steps"; }

std::vector<TokenShape> token_shapes(const Vocab& vocab) {
  std::vector<TokenShape> out;
  out.reserve(vocab.size());
  for (const auto& s : vocab.tokens()) {
    TokenShape shape;
    shape.capitalized = !s.empty() && std::isupper(static_cast<unsigned char>(s[0]));
    shape.leading_space = !is_punctuation_token(s);
    out.push_back(shape);
  }
  return out;
}

template <typename T>
std::vector<TokenId> top_k_ids(std::span<const T> logits, int k) {
  std::vector<TokenId> ids(logits.size());
  std::iota(ids.begin(), ids.end(), 0);
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)), ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(kk), ids.end(), [&](TokenId a, TokenId b) {
    const auto la = logits[static_cast<std::size_t>(a)], lb = logits[static_cast<std::size_t>(b)];
    return la > lb || (la == lb && a < b);
  });
  ids.resize(kk);
  return ids;
}

template std::vector<TokenId> top_k_ids<float>(std::span<const float>, int);
template std::vector<TokenId> top_k_ids<double>(std::span<const double>, int);

namespace {

template <typename T>
void check_finite_row(std::span<const T> row) {
  for (auto v : row)
    if (!std::isfinite(static_cast<double>(v))) fail(ErrorKind::kNumeric, "non-finite logit");
}

// log-softmax of the logits restricted to `support`.
template <typename T>
std::vector<double> restricted_log_softmax(std::span<const T> logits, std::span<const TokenId> support) {
  std::vector<double> z(support.size());
  double mx = -INFINITY;
  for (std::size_t i = 0; i < support.size(); ++i) {
    z[i] = static_cast<double>(logits[static_cast<std::size_t>(support[i])]);
    mx = std::max(mx, z[i]);
  }
  double sum = 0;
  for (double v : z) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (double& v : z) v -= lse;
  return z;
}

double top1_probability(std::span<const float> row) {
  double mx = -INFINITY;
  for (float v : row) mx = std::max(mx, static_cast<double>(v));
  double sum = 0;
  for (float v : row) sum += std::exp(static_cast<double>(v) - mx);
  return 1.0 / sum;
}

template <typename T>
double full_probability(std::span<const T> row, TokenId id) {
  double mx = -INFINITY;
  for (T v : row) mx = std::max(mx, static_cast<double>(v));
  double sum = 0;
  for (T v : row) sum += std::exp(static_cast<double>(v) - mx);
  return std::exp(static_cast<double>(row[static_cast<std::size_t>(id)]) - mx) / sum;
}

template <typename M>
auto row_span(const M& m, Eigen::Index r) {
  using T = typename M::Scalar;
  return std::span<const T>(m.row(r).data(), static_cast<std::size_t>(m.cols()));
}

template <typename M>
auto mutable_row_span(M& m, Eigen::Index r) {
  using T = typename M::Scalar;
  return std::span<T>(m.row(r).data(), static_cast<std::size_t>(m.cols()));
}

}  // namespace

ForgetTarget build_forget_target(std::span<const float> reference_logits, const ObliviateConfig& cfg,
                                 std::span<const TokenShape> shapes) {
  require(cfg.top_k >= 2 && static_cast<std::size_t>(cfg.top_k) <= reference_logits.size(),
          ErrorKind::kInvalidArgument, "top_k must lie in [2, vocab_size]");
  check_finite_row(reference_logits);
  ForgetTarget out;
  const bool match = cfg.candidate_strategy == CandidateStrategy::kMatchCaseAndSpace && !shapes.empty();
  const auto ranked = top_k_ids(reference_logits, match ? static_cast<int>(reference_logits.size()) : cfg.top_k);
  out.target = ranked.front();
  out.support.push_back(out.target);
  if (match) {
    require(shapes.size() == reference_logits.size(), ErrorKind::kInvalidArgument, "token shape table size mismatch");
    const auto want = shapes[static_cast<std::size_t>(out.target)];
    for (std::size_t i = 1; i < ranked.size() && static_cast<int>(out.support.size()) < cfg.top_k; ++i)
      if (shapes[static_cast<std::size_t>(ranked[i])] == want) out.support.push_back(ranked[i]);
    if (out.support.size() == 1)  // no compatible alternates: fall back to plain ranking
      out.support.assign(ranked.begin(), ranked.begin() + cfg.top_k);
  } else {
    out.support.assign(ranked.begin(), ranked.end());
  }

  const std::span<const TokenId> alternates(out.support.data() + 1, out.support.size() - 1);
  const auto alt_log = restricted_log_softmax(reference_logits, alternates);
  out.log_q.reserve(out.support.size());
  out.log_q.push_back(std::log(cfg.floor_prob));
  const double keep = std::log1p(-cfg.floor_prob);
  for (double v : alt_log) out.log_q.push_back(keep + v);
  return out;
}

template <typename T>
double forget_loss(std::span<const T> live_logits, const ForgetTarget& target, KlDirection direction,
                   std::span<T> d_logits, double scale) {
  for (auto id : target.support) {
    if (!std::isfinite(static_cast<double>(live_logits[static_cast<std::size_t>(id)])))
      fail(ErrorKind::kNumeric, "non-finite logit in forget support");
  }
  const auto lp = restricted_log_softmax(live_logits, target.support);
  const std::size_t n = lp.size();
  double loss = 0;
  if (direction == KlDirection::kForward) {
    for (std::size_t i = 0; i < n; ++i) loss += std::exp(lp[i]) * (lp[i] - target.log_q[i]);
    if (!d_logits.empty())
      for (std::size_t i = 0; i < n; ++i)
        d_logits[static_cast<std::size_t>(target.support[i])] +=
            static_cast<T>(scale * std::exp(lp[i]) * (lp[i] - target.log_q[i] - loss));
  } else {
    for (std::size_t i = 0; i < n; ++i) loss += std::exp(target.log_q[i]) * (target.log_q[i] - lp[i]);
    if (!d_logits.empty())
      for (std::size_t i = 0; i < n; ++i)
        d_logits[static_cast<std::size_t>(target.support[i])] +=
            static_cast<T>(scale * (std::exp(lp[i]) - std::exp(target.log_q[i])));
  }
  return loss;
}

template double forget_loss<float>(std::span<const float>, const ForgetTarget&, KlDirection, std::span<float>, double);
template double forget_loss<double>(std::span<const double>, const ForgetTarget&, KlDirection, std::span<double>,
                                    double);

MaintainTarget build_maintain_target(std::span<const float> reference_logits, int top_k) {
  require(top_k >= 1 && static_cast<std::size_t>(top_k) <= reference_logits.size(), ErrorKind::kInvalidArgument,
          "top_k must lie in [1, vocab_size]");
  check_finite_row(reference_logits);
  MaintainTarget out;
  out.support = top_k_ids(reference_logits, top_k);
  out.log_p = restricted_log_softmax(reference_logits, out.support);
  return out;
}

template <typename T>
double maintain_loss(std::span<const T> live_logits, const MaintainTarget& target, std::span<T> d_logits,
                     double scale) {
  for (auto id : target.support) {
    if (!std::isfinite(static_cast<double>(live_logits[static_cast<std::size_t>(id)])))
      fail(ErrorKind::kNumeric, "non-finite logit in maintain support");
  }
  const auto lq = restricted_log_softmax(live_logits, target.support);
  double loss = 0;
  for (std::size_t i = 0; i < lq.size(); ++i) loss += std::exp(target.log_p[i]) * (target.log_p[i] - lq[i]);
  if (!d_logits.empty())
    for (std::size_t i = 0; i < lq.size(); ++i)
      d_logits[static_cast<std::size_t>(target.support[i])] +=
          static_cast<T>(scale * (std::exp(lq[i]) - std::exp(target.log_p[i])));
  return loss;
}

template double maintain_loss<float>(std::span<const float>, const MaintainTarget&, std::span<float>, double);
template double maintain_loss<double>(std::span<const double>, const MaintainTarget&, std::span<double>, double);

double maintain_loss(std::span<const float> live_logits, std::span<const float> reference_logits,
                     const ObliviateConfig& cfg) {
  require(live_logits.size() == reference_logits.size(), ErrorKind::kInvalidArgument, "logit rows differ in size");
  check_finite_row(live_logits);
  return maintain_loss<float>(live_logits, build_maintain_target(reference_logits, cfg.top_k));
}

std::vector<int> TargetSelection::target_positions() const {
  std::vector<int> out;
  out.reserve(targets.size());
  for (const auto& t : targets) out.push_back(t.position);
  return out;
}

std::vector<int> stride_positions(int length, int stride) {
  std::vector<int> out;
  for (int p = stride; p < length; p += stride + 1) out.push_back(p);
  return out;
}

namespace {

TargetSelection select_from_logits(const LogitMatrix& logits, std::span<const TokenId> ids,
                                   const ObliviateConfig& cfg, std::span<const TokenShape> shapes) {
  TargetSelection sel;
  sel.candidates = stride_positions(static_cast<int>(ids.size()), cfg.stride);
  for (int p : sel.candidates) {
    // Position 0 has no predicting row; it is the <bos> slot.
    const TokenId tok = ids[static_cast<std::size_t>(p)];
    if (p == 0 || (tok >= Vocab::kBos && tok <= Vocab::kUnk)) {
      sel.excluded.push_back({p, ExclusionReason::kSpecialToken});
      continue;
    }
    const auto row = row_span(logits, p - 1);
    const double top1 = top1_probability(row);
    if (top1 >= 1.0 - cfg.certainty_cutoff) {
      sel.excluded.push_back({p, ExclusionReason::kSaturatedProbability});
      continue;
    }
    sel.targets.push_back({p, build_forget_target(row, cfg, shapes), top1});
  }
  return sel;
}

}  // namespace

TargetSelection select_targets(const FrozenModel& reference, const TokenSequence& seq, const ObliviateConfig& cfg,
                               std::span<const TokenShape> shapes) {
  cfg.validate(static_cast<std::size_t>(reference.config().vocab_size));
  const auto logits = reference.forward(seq.ids);
  return select_from_logits(logits, seq.ids, cfg, shapes);
}

std::vector<PreparedArticle> prepare_articles(const FrozenModel& reference, std::span<const TokenSequence> articles,
                                              const ObliviateConfig& cfg, std::span<const TokenShape> shapes) {
  cfg.validate(static_cast<std::size_t>(reference.config().vocab_size));
  std::vector<PreparedArticle> out;
  out.reserve(articles.size());
  for (const auto& seq : articles) {
    PreparedArticle a;
    a.ids = seq.ids;
    const auto logits = reference.forward(seq.ids);
    a.selection = select_from_logits(logits, seq.ids, cfg, shapes);
    std::vector<bool> is_candidate(seq.ids.size(), false);
    for (int p : a.selection.candidates) is_candidate[static_cast<std::size_t>(p)] = true;
    for (int p = 1; p < static_cast<int>(seq.ids.size()); ++p) {
      if (is_candidate[static_cast<std::size_t>(p)]) continue;
      a.maintain_positions.push_back(p);
      a.maintain.push_back(build_maintain_target(row_span(logits, p - 1), cfg.top_k));
    }
    out.push_back(std::move(a));
  }
  return out;
}

template <typename T>
ObjectiveValue unmemorize_objective(const Transformer<T>& model, std::span<const PreparedArticle> articles,
                                    const ObliviateConfig& cfg, std::span<T> grads) {
  ObjectiveValue out;
  if (articles.empty()) return out;
  const double inv_articles = 1.0 / static_cast<double>(articles.size());
  ForwardTape<T> tape;
  RowMatrix<T> dlogits;
  const bool want_grad = !grads.empty();
  for (const auto& a : articles) {
    const auto logits = model.forward(a.ids, tape);
    if (want_grad) dlogits.setZero(logits.rows(), logits.cols());
    const auto& targets = a.selection.targets;
    double f = 0, m = 0;
    if (!targets.empty()) {
      const double scale = cfg.lambda_f * inv_articles / static_cast<double>(targets.size());
      for (const auto& t : targets) {
        const auto row = row_span(logits, t.position - 1);
        std::span<T> drow = want_grad ? mutable_row_span(dlogits, t.position - 1) : std::span<T>{};
        f += forget_loss<T>(row, t.forget, cfg.kl_direction, drow, scale);
        out.max_target_prob = std::max(out.max_target_prob, full_probability(row, t.forget.target));
      }
      f /= static_cast<double>(targets.size());
    }
    if (!a.maintain.empty()) {
      const double scale = cfg.lambda_m * inv_articles / static_cast<double>(a.maintain.size());
      for (std::size_t i = 0; i < a.maintain.size(); ++i) {
        const int p = a.maintain_positions[i];
        std::span<T> drow = want_grad ? mutable_row_span(dlogits, p - 1) : std::span<T>{};
        m += maintain_loss<T>(row_span(logits, p - 1), a.maintain[i], drow, scale);
      }
      m /= static_cast<double>(a.maintain.size());
    }
    out.forget += f * inv_articles;
    out.maintain += m * inv_articles;
    out.total += (cfg.lambda_f * f + cfg.lambda_m * m) * inv_articles;
    if (want_grad) model.backward(tape, dlogits, grads);
  }
  return out;
}

template ObjectiveValue unmemorize_objective<float>(const Transformer<float>&, std::span<const PreparedArticle>,
                                                    const ObliviateConfig&, std::span<float>);
template ObjectiveValue unmemorize_objective<double>(const Transformer<double>&, std::span<const PreparedArticle>,
                                                     const ObliviateConfig&, std::span<double>);

std::vector<std::vector<PositionProb>> target_probabilities(const Model& live,
                                                            std::span<const PreparedArticle> articles) {
  std::vector<std::vector<PositionProb>> out;
  for (const auto& a : articles) {
    std::vector<PositionProb> probs;
    if (!a.selection.targets.empty()) {
      const auto logits = live.forward(a.ids);
      for (const auto& t : a.selection.targets)
        probs.push_back({t.position, t.forget.target, full_probability(row_span(logits, t.position - 1), t.forget.target)});
    }
    out.push_back(std::move(probs));
  }
  return out;
}

double maintain_drift(const Model& live, std::span<const PreparedArticle> articles) {
  double total = 0;
  std::size_t count = 0;
  for (const auto& a : articles) {
    if (a.maintain.empty()) continue;
    const auto logits = live.forward(a.ids);
    for (std::size_t i = 0; i < a.maintain.size(); ++i)
      total += maintain_loss<float>(row_span(logits, a.maintain_positions[i] - 1), a.maintain[i]);
    count += a.maintain.size();
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

UnmemorizeReport unmemorize(Model& live, std::span<const PreparedArticle> articles, const ObliviateConfig& cfg) {
  cfg.validate(static_cast<std::size_t>(live.config().vocab_size));
  UnmemorizeReport report;
  std::size_t n_targets = 0;
  for (const auto& a : articles) n_targets += a.selection.targets.size();

  if (n_targets == 0) {
    report.stop_reason = StopReason::kThreshold;
    report.final_target_probs.assign(articles.size(), {});
    report.maintain_drift = maintain_drift(live, articles);
    return report;
  }

  Adam adam(live.num_params(), {0.9, 0.999, 1e-8, 1.0});
  AlignedVector<float> grads(live.num_params());
  AlignedVector<float> last_good(live.params().begin(), live.params().end());

  for (int step = 0;; ++step) {
    std::fill(grads.begin(), grads.end(), 0.0f);
    const auto value = unmemorize_objective<float>(live, articles, cfg, grads);
    if (!std::isfinite(value.total)) {
      std::copy(last_good.begin(), last_good.end(), live.params().begin());
      fail(ErrorKind::kNumeric, "unmemorize: non-finite loss at step " + std::to_string(step) +
                                    "; live model restored to last good parameters");
    }
    report.losses.push_back({step, value.forget, value.maintain, value.total, value.max_target_prob});
    if (value.max_target_prob < cfg.stop_threshold) {
      report.stop_reason = StopReason::kThreshold;
      break;
    }
    if (step >= cfg.max_steps) {
      report.stop_reason = StopReason::kMaxSteps;
      break;
    }
    std::copy(live.params().begin(), live.params().end(), last_good.begin());
    adam.step<float>(live.params(), grads, cfg.learning_rate);
    ++report.steps_run;
  }

  report.final_target_probs = target_probabilities(live, articles);
  for (const auto& probs : report.final_target_probs)
    for (const auto& p : probs) report.final_max_target_prob = std::max(report.final_max_target_prob, p.prob);
  report.maintain_drift = maintain_drift(live, articles);
  return report;
}

UnmemorizeReport unmemorize(Model& live, const FrozenModel& reference, std::span<const TokenSequence> forget_set,
                            const ObliviateConfig& cfg, std::span<const TokenShape> shapes) {
  const auto prepared = prepare_articles(reference, forget_set, cfg, shapes);
  return unmemorize(live, prepared, cfg);
}

}  // namespace unmemo
