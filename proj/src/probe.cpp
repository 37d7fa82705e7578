#include "unmemo/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "unmemo/error.hpp"
#include "unmemo/metrics.hpp"
#include "unmemo/rng.hpp"

namespace unmemo {

const char* to_string(DecodeMode mode) { return mode == DecodeMode::kGreedy ? "greedy" : "temperature"; }

namespace {

TokenId argmax(const RowVec<float>& logits) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i)
    if (logits(i) > logits(best)) best = i;
  return static_cast<TokenId>(best);
}

TokenId sample(const RowVec<float>& logits, double temperature, Rng& rng) {
  const Eigen::ArrayXd z = logits.cast<double>().array().transpose() / temperature;
  const Eigen::ArrayXd p = (z - z.maxCoeff()).exp();
  const double u = rng.uniform() * p.sum();
  double acc = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    acc += p(i);
    if (u < acc) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(p.size() - 1);
}

}  // namespace

std::vector<TokenId> generate(const Model& model, std::span<const TokenId> prefix, int max_new, DecodeMode mode,
                              double temperature, std::uint64_t seed) {
  require(!prefix.empty(), ErrorKind::kInvalidArgument, "generate needs a non-empty prefix");
  require(static_cast<int>(prefix.size()) <= model.config().context_len, ErrorKind::kInvalidArgument,
          "prefix longer than context_len");
  require(mode == DecodeMode::kGreedy || temperature > 0, ErrorKind::kInvalidArgument,
          "temperature must be > 0");
  Decoder dec(model);
  const RowVec<float>* logits = nullptr;
  for (auto id : prefix) logits = &dec.step(id);
  Rng rng(seed);
  std::vector<TokenId> out;
  while (static_cast<int>(out.size()) < max_new) {
    const TokenId next = mode == DecodeMode::kGreedy ? argmax(*logits) : sample(*logits, temperature, rng);
    if (next == Vocab::kEos) break;
    out.push_back(next);
    if (dec.position() >= model.config().context_len) break;
    if (static_cast<int>(out.size()) < max_new) logits = &dec.step(next);
  }
  return out;
}

int greedy_match_length(const Model& model, std::span<const TokenId> seq, int start, int prefix_len) {
  require(start >= 0 && prefix_len >= 1 && start + prefix_len <= static_cast<int>(seq.size()),
          ErrorKind::kInvalidArgument, "greedy_match_length: prefix outside sequence");
  const int begin = start + prefix_len;
  const int n = static_cast<int>(seq.size());
  if (begin == n) return 0;
  Decoder dec(model);
  const RowVec<float>* logits = nullptr;
  for (int t = start; t < begin; ++t) logits = &dec.step(seq[static_cast<std::size_t>(t)]);
  int matched = 0;
  for (int t = begin; t < n; ++t) {
    if (argmax(*logits) != seq[static_cast<std::size_t>(t)]) break;
    ++matched;
    if (t + 1 == n || dec.position() >= model.config().context_len) break;
    logits = &dec.step(seq[static_cast<std::size_t>(t)]);
  }
  return matched;
}

void ProbeProtocol::validate() const {
  require(!offsets.empty() && !prefix_lengths.empty(), ErrorKind::kInvalidArgument,
          "probe protocol needs offsets and prefix lengths");
  for (int o : offsets) require(o >= 0, ErrorKind::kInvalidArgument, "probe offsets must be >= 0");
  for (int l : prefix_lengths) require(l >= 1, ErrorKind::kInvalidArgument, "probe prefix lengths must be >= 1");
  require(greedy || temperature_mode, ErrorKind::kInvalidArgument, "probe protocol needs at least one mode");
  if (temperature_mode) {
    require(temperature > 0, ErrorKind::kInvalidArgument, "temperature must be > 0");
    require(samples_per_temp >= 1, ErrorKind::kInvalidArgument, "samples_per_temp must be >= 1");
  }
  require(max_new_tokens >= 0, ErrorKind::kInvalidArgument, "max_new_tokens must be >= 0");
}

std::vector<int> even_lengths(int lo, int hi) {
  std::vector<int> out;
  for (int l = lo + (lo % 2); l <= hi; l += 2) out.push_back(l);
  return out;
}

void ProbeResult::aggregate() {
  best_lcs = best_lcs_contiguous = 0;
  best_rouge2 = best_lcs_ratio = 0.0;
  best_ed = std::numeric_limits<int>::max();
  best_ed_ratio = std::numeric_limits<double>::infinity();
  for (const auto& r : rows) {
    best_lcs = std::max(best_lcs, r.lcs);
    best_lcs_contiguous = std::max(best_lcs_contiguous, r.lcs_contiguous);
    best_ed = std::min(best_ed, r.edit_distance);
    best_rouge2 = std::max(best_rouge2, r.rouge2_f1);
    const double denom = std::max(1, r.suffix_words);
    best_lcs_ratio = std::max(best_lcs_ratio, r.lcs / denom);
    best_ed_ratio = std::min(best_ed_ratio, r.edit_distance / denom);
  }
  if (rows.empty()) {
    best_ed = 0;
    best_ed_ratio = 0.0;
  }
}

ProbeResult probe_sweep(const Model& model, const Vocab& vocab, const TokenSequence& article,
                        const ProbeProtocol& protocol, std::string article_id) {
  protocol.validate();
  // Strip the <bos>/<eos> frame if present.
  std::span<const TokenId> body(article.ids);
  if (!body.empty() && body.front() == Vocab::kBos) body = body.subspan(1);
  if (!body.empty() && body.back() == Vocab::kEos) body = body.first(body.size() - 1);
  const auto prompt = encode(vocab, protocol.prompt_prefix).ids;
  const int n = static_cast<int>(body.size());

  ProbeResult result;
  result.article_id = std::move(article_id);
  for (int offset : protocol.offsets) {
    for (int len : protocol.prefix_lengths) {
      const int suffix_len = n - offset - len;
      const int prefix_total = 1 + static_cast<int>(prompt.size()) + len;
      if (suffix_len < 1 || prefix_total >= model.config().context_len) {
        result.skipped.push_back({offset, len});
        continue;
      }
      std::vector<TokenId> prefix{Vocab::kBos};
      prefix.insert(prefix.end(), prompt.begin(), prompt.end());
      prefix.insert(prefix.end(), body.begin() + offset, body.begin() + offset + len);
      const auto suffix = body.subspan(static_cast<std::size_t>(offset + len));
      const WordSeq truth = split_words(decode(vocab, suffix));
      const int max_new = protocol.max_new_tokens > 0 ? protocol.max_new_tokens : suffix_len;

      auto score = [&](DecodeMode mode, int sample_idx, std::uint64_t seed) {
        const auto ids = generate(model, prefix, max_new, mode, protocol.temperature, seed);
        ProbeRow row;
        row.offset = offset;
        row.prefix_len = len;
        row.mode = mode;
        row.sample = sample_idx;
        row.generated = decode(vocab, ids);
        const WordSeq gen = split_words(row.generated);
        row.suffix_words = static_cast<int>(truth.size());
        row.generated_words = static_cast<int>(gen.size());
        row.lcs = lcs_words(gen, truth);
        row.lcs_contiguous = lcs_contiguous_words(gen, truth);
        row.edit_distance = edit_distance_words(gen, truth);
        const auto r2 = rouge2(gen, truth);
        row.rouge2_f1 = r2.f1;
        row.rouge2_recall = r2.recall;
        result.rows.push_back(std::move(row));
      };
      if (protocol.greedy) score(DecodeMode::kGreedy, 0, 0);
      if (protocol.temperature_mode) {
        for (int s = 0; s < protocol.samples_per_temp; ++s) {
          const auto seed = derive_seed(derive_seed(protocol.seed, static_cast<std::uint64_t>(offset)),
                                        static_cast<std::uint64_t>(len) * 1024 + static_cast<std::uint64_t>(s));
          score(DecodeMode::kTemperature, s, seed);
        }
      }
    }
  }
  if (result.rows.empty())
    fail(ErrorKind::kProtocolInfeasible, "no feasible probe combination for article " + result.article_id);
  result.aggregate();
  return result;
}

namespace {
std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}
}  // namespace

void write_probe_csv(const std::filesystem::path& path, std::span<const ProbeResult> results) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::kIo, "cannot write probe CSV " + path.string());
  out << "article_id,offset,prefix_len,mode,sample,suffix_words,generated_words,lcs,lcs_contiguous,"
         "edit_distance,rouge2_f1,rouge2_recall,generated\n"
      << std::setprecision(9);
  for (const auto& res : results)
    for (const auto& r : res.rows)
      out << res.article_id << ',' << r.offset << ',' << r.prefix_len << ',' << to_string(r.mode) << ',' << r.sample
          << ',' << r.suffix_words << ',' << r.generated_words << ',' << r.lcs << ',' << r.lcs_contiguous << ','
          << r.edit_distance << ',' << r.rouge2_f1 << ',' << r.rouge2_recall << ',' << csv_quote(r.generated)
          << '\n';
}

}  // namespace unmemo
