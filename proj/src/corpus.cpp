#include "unmemo/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

#include "unmemo/error.hpp"
#include "unmemo/rng.hpp"

namespace unmemo {

namespace {

constexpr std::array<std::string_view, 4> kSpecialSurfaces = {
    "<bos>", "<eos>", "<pad>", "<unk>"};

constexpr std::string_view kPunctuation = ".,;:!?";

bool is_punct_char(char c) { return kPunctuation.find(c) != std::string_view::npos; }

// ---------------------------------------------------------------------------
// Bundled word lists.

struct Topic {
  std::string_view name;
  std::array<std::string_view, 10> nouns;
};

constexpr std::array<Topic, 25> kTopics = {{
    {"harbor", {"ships", "sailors", "nets", "tides", "lighthouse", "cargo", "anchor", "dock", "gulls", "ferry"}},
    {"orchard", {"apples", "ladders", "baskets", "blossoms", "bees", "branches", "cider", "growers", "frost", "seedlings"}},
    {"observatory", {"telescope", "comet", "lenses", "astronomers", "nebula", "orbit", "dome", "charts", "eclipse", "planets"}},
    {"railway", {"engine", "platform", "tracks", "conductor", "carriage", "signals", "tunnel", "timetable", "freight", "station"}},
    {"library", {"manuscripts", "shelves", "archivist", "ledger", "catalog", "scrolls", "readers", "volumes", "index", "binding"}},
    {"bakery", {"ovens", "loaves", "flour", "bakers", "dough", "crust", "pastries", "yeast", "bread", "trays"}},
    {"mountain", {"glacier", "summit", "climbers", "ridge", "avalanche", "ropes", "valley", "pass", "boulders", "shelter"}},
    {"river", {"delta", "barges", "currents", "reeds", "fishermen", "bridge", "banks", "flood", "herons", "mills"}},
    {"market", {"stalls", "merchants", "spices", "coins", "bargains", "crates", "lanterns", "vendors", "silk", "scales"}},
    {"forge", {"hammers", "anvil", "blacksmith", "iron", "sparks", "tools", "bellows", "chisels", "carpenter", "timber"}},
    {"garden", {"roses", "hedges", "gardener", "fountain", "soil", "vines", "tulips", "paths", "greenhouse", "seeds"}},
    {"hospital", {"nurses", "surgeon", "ward", "bandages", "patients", "fever", "medicine", "clinic", "doctor", "stretcher"}},
    {"school", {"teacher", "pupils", "chalk", "lessons", "classroom", "slates", "essays", "recess", "grammar", "spelling"}},
    {"theater", {"actors", "stage", "curtain", "audience", "script", "costumes", "rehearsal", "playwright", "balcony", "applause"}},
    {"farm", {"cattle", "barn", "tractor", "fields", "harvest", "wheat", "fences", "pigs", "shepherd", "hay"}},
    {"desert", {"dunes", "caravan", "camels", "oasis", "sandstorm", "nomads", "wells", "mirage", "cactus", "scorpions"}},
    {"forest", {"pines", "owls", "foresters", "moss", "clearing", "cabin", "deer", "ferns", "acorns", "trails"}},
    {"factory", {"machines", "workers", "conveyor", "smoke", "boilers", "gears", "shifts", "foreman", "valves", "pistons"}},
    {"weather", {"clouds", "storm", "thunder", "rainfall", "forecast", "winds", "hail", "barometer", "drought", "fog"}},
    {"music", {"violin", "orchestra", "melody", "drums", "choir", "composer", "chords", "flute", "rhythm", "concert"}},
    {"chess", {"rooks", "pawns", "tournament", "board", "players", "gambit", "clock", "knight", "endgame", "opening"}},
    {"apiary", {"hive", "honey", "beekeeper", "wax", "swarm", "queen", "pollen", "combs", "drones", "nectar"}},
    {"volcano", {"lava", "crater", "ash", "magma", "eruption", "geologist", "vents", "slopes", "sulfur", "tremors"}},
    {"postal", {"letters", "stamps", "postman", "parcels", "envelopes", "mailbags", "route", "postmark", "courier", "sorters"}},
    {"bridgeworks", {"cables", "girders", "engineers", "rivets", "pillars", "blueprints", "cranes", "steel", "arches", "concrete"}},
}};

constexpr std::array<std::string_view, 36> kAdjectives = {
    "old", "quiet", "bright", "narrow", "ancient", "heavy", "small", "large", "careful",
    "patient", "golden", "silent", "crowded", "distant", "gentle", "sudden", "hidden", "steady",
    "broken", "fragile", "restless", "curious", "proud", "humble", "strange", "famous",
    "forgotten", "early", "late", "cold", "warm", "pale", "dark", "empty", "busy", "sturdy"};

constexpr std::array<std::string_view, 34> kTransitive = {
    "repaired", "carried", "watched", "found", "measured", "painted", "cleaned", "studied",
    "opened", "closed", "followed", "counted", "gathered", "lifted", "moved", "sold", "built",
    "planted", "recorded", "guarded", "described", "tested", "borrowed", "shared", "noticed",
    "mended", "polished", "sorted", "traded", "visited", "inspected", "admired", "questioned",
    "ignored"};

constexpr std::array<std::string_view, 18> kIntransitive = {
    "waited", "slept", "wandered", "returned", "laughed", "vanished", "listened", "hesitated",
    "arrived", "departed", "rested", "worked", "sang", "trembled", "paused", "grew", "faded",
    "remained"};

constexpr std::array<std::string_view, 15> kAdverbs = {
    "slowly", "quickly", "quietly", "carefully", "often", "rarely", "suddenly", "gladly",
    "patiently", "nervously", "proudly", "softly", "always", "seldom", "gently"};

constexpr std::array<std::string_view, 12> kPrepositions = {
    "near", "behind", "beside", "under", "across", "beyond", "inside", "along", "above",
    "toward", "around", "past"};

constexpr std::array<std::string_view, 10> kConnectives = {
    "However", "Meanwhile", "Later", "Still", "Eventually", "Afterward", "Nevertheless",
    "Sometimes", "Yesterday", "Tonight"};

constexpr std::array<std::string_view, 8> kDeterminers = {
    "the", "a", "every", "this", "that", "each", "one", "another"};

constexpr std::array<std::string_view, 30> kPersons = {
    "Mara", "Tobias", "Elena", "Jonah", "Priya", "Oskar", "Lena", "Rafael", "Ines", "Hugo",
    "Nadia", "Felix", "Greta", "Samuel", "Yara", "Dmitri", "Clara", "Marcus", "Ada", "Bruno",
    "Selma", "Victor", "Irene", "Kofi", "Ruth", "Emil", "Leona", "Anton", "Zora", "Cyrus"};

constexpr std::array<std::string_view, 24> kPlaces = {
    "Arden", "Bellmoor", "Corvale", "Dunmere", "Eastwick", "Fenwick", "Greyport", "Harrowgate",
    "Islay", "Kestrel", "Larkfield", "Marrow", "Northam", "Oakridge", "Pellham", "Quarry",
    "Redwater", "Stonebridge", "Thornbury", "Umber", "Valemont", "Westmarch", "Yarrow", "Zennor"};

// Sentence templates. Upper-case single letters are slots:
//   D determiner, A adjective, T topic noun, V transitive verb,
//   I intransitive verb, X adverb, P preposition, R person, L place,
//   C connective. Everything else is literal.
constexpr std::array<std::string_view, 18> kTemplates = {
    "D A T V D T .",
    "R V D A T P L .",
    "C , D T X I P D T .",
    "in L , R V D A T and D T .",
    "D T I X .",
    "R and R V D T P D A T .",
    "at dawn , D A T I P L .",
    "the T of L was A and A .",
    "R X V D T , and D T I .",
    "nobody in L V D A T .",
    "R I .",
    "D T V D T .",
    "C , R V that D T was A .",
    "many A T I P D T in L .",
    "R V D T X , then I .",
    "for years , D T of L V D A T P D T .",
    "it was A .",
    "R V the T because D T was A .",
};

std::vector<std::string_view> split_template(std::string_view tpl) {
  std::vector<std::string_view> parts;
  std::size_t pos = 0;
  while (pos < tpl.size()) {
    const auto next = tpl.find(' ', pos);
    const auto end = next == std::string_view::npos ? tpl.size() : next;
    if (end > pos) parts.push_back(tpl.substr(pos, end - pos));
    pos = end + 1;
  }
  return parts;
}

int template_words(std::string_view tpl) {
  int n = 0;
  for (auto part : split_template(tpl))
    if (!(part.size() == 1 && is_punct_char(part[0]))) ++n;
  return n;
}

template <std::size_t N>
std::string_view pick(Rng& rng, const std::array<std::string_view, N>& list) {
  return list[rng.below(N)];
}

std::string capitalize(std::string_view word) {
  std::string out(word);
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

bool starts_upper(std::string_view word) {
  return !word.empty() && std::isupper(static_cast<unsigned char>(word[0]));
}

// Order-2 transition weight between templates; fixed for the generator.
std::uint64_t template_weight(std::size_t prev2, std::size_t prev1, std::size_t next) {
  const auto h = mix_seed((prev2 * 131 + prev1) * 131 + next + 0x51ed27ULL);
  return 1 + h % 6;
}

std::size_t sample_template(Rng& rng, std::size_t prev2, std::size_t prev1,
                            const std::vector<std::size_t>& allowed) {
  std::uint64_t total = 0;
  for (auto t : allowed) total += template_weight(prev2, prev1, t);
  auto r = rng.below(total);
  for (auto t : allowed) {
    const auto w = template_weight(prev2, prev1, t);
    if (r < w) return t;
    r -= w;
  }
  return allowed.back();
}

struct ArticleContext {
  const Topic* primary;
  const Topic* secondary;
  std::array<std::string_view, 3> persons;
  std::array<std::string_view, 2> places;
};

std::string render_sentence(Rng& rng, std::string_view tpl, const ArticleContext& ctx) {
  std::vector<std::string> words;
  for (auto slot : split_template(tpl)) {
    std::string word;
    if (slot.size() == 1 && std::isupper(static_cast<unsigned char>(slot[0]))) {
      switch (slot[0]) {
        case 'D': word = pick(rng, kDeterminers); break;
        case 'A': word = pick(rng, kAdjectives); break;
        case 'T': {
          const Topic* topic = rng.below(10) < 7 ? ctx.primary : ctx.secondary;
          word = topic->nouns[rng.below(topic->nouns.size())];
          break;
        }
        case 'V': word = pick(rng, kTransitive); break;
        case 'I': word = pick(rng, kIntransitive); break;
        case 'X': word = pick(rng, kAdverbs); break;
        case 'P': word = pick(rng, kPrepositions); break;
        case 'R': word = ctx.persons[rng.below(ctx.persons.size())]; break;
        case 'L': word = ctx.places[rng.below(ctx.places.size())]; break;
        case 'C': word = pick(rng, kConnectives); break;
        default: word = slot;
      }
    } else {
      word = slot;
    }
    words.push_back(std::move(word));
  }
  if (!words.empty()) words[0] = capitalize(words[0]);
  std::string out;
  for (const auto& w : words) {
    if (!out.empty() && !is_punctuation_token(w)) out += ' ';
    out += w;
  }
  return out;
}

std::string generate_one(std::uint64_t seed, int target_words) {
  Rng rng(seed);
  ArticleContext ctx{};
  ctx.primary = &kTopics[rng.below(kTopics.size())];
  do {
    ctx.secondary = &kTopics[rng.below(kTopics.size())];
  } while (ctx.secondary == ctx.primary);
  for (auto& p : ctx.persons) p = pick(rng, kPersons);
  for (auto& p : ctx.places) p = pick(rng, kPlaces);

  const int hi = static_cast<int>(std::floor(target_words * 1.15));

  std::vector<std::size_t> all(kTemplates.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  std::string text;
  int words = 0;
  std::size_t prev2 = kTemplates.size(), prev1 = kTemplates.size();
  while (words < target_words) {
    std::vector<std::size_t> allowed;
    const bool near_end = hi - words < 16;
    for (auto t : all) {
      const int n = template_words(kTemplates[t]);
      if (!near_end || words + n <= hi) allowed.push_back(t);
    }
    if (allowed.empty()) break;
    const auto t = sample_template(rng, prev2, prev1, allowed);
    if (!text.empty()) text += ' ';
    text += render_sentence(rng, kTemplates[t], ctx);
    words += template_words(kTemplates[t]);
    prev2 = prev1;
    prev1 = t;
  }
  return text;
}

// word -> (category tag, index) used by rephrase.
struct CategoryIndex {
  std::unordered_map<std::string, std::vector<std::string_view>> alternatives;

  CategoryIndex() {
    auto add_list = [&](auto begin, auto end) {
      std::vector<std::string_view> list(begin, end);
      for (auto w : list) alternatives[std::string(w)] = list;
    };
    add_list(kAdjectives.begin(), kAdjectives.end());
    add_list(kTransitive.begin(), kTransitive.end());
    add_list(kIntransitive.begin(), kIntransitive.end());
    add_list(kAdverbs.begin(), kAdverbs.end());
    add_list(kPersons.begin(), kPersons.end());
    add_list(kPlaces.begin(), kPlaces.end());
    for (const auto& topic : kTopics) add_list(topic.nouns.begin(), topic.nouns.end());
  }
};

const CategoryIndex& category_index() {
  static const CategoryIndex index;
  return index;
}

std::string lowercase_first(std::string_view w) {
  std::string out(w);
  if (!out.empty()) out[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(out[0])));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab() {
  for (auto s : kSpecialSurfaces) add(s);
}

Vocab::Vocab(std::vector<std::string> tokens) {
  require(tokens.size() >= kSpecialSurfaces.size() && tokens.size() <= kMaxSize, ErrorKind::kInvalidArgument,
          "vocabulary size out of range: " + std::to_string(tokens.size()));
  for (std::size_t i = 0; i < kSpecialSurfaces.size(); ++i)
    require(tokens[i] == kSpecialSurfaces[i], ErrorKind::kInvalidArgument,
            "special token mismatch at id " + std::to_string(i));
  for (const auto& t : tokens) {
    require(!index_.contains(t), ErrorKind::kInvalidArgument, "duplicate vocabulary surface: " + t);
    add(t);
  }
}

const std::string& Vocab::surface(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    fail(ErrorKind::kOutOfRange, "token id " + std::to_string(id) + " outside vocabulary of size " +
                                     std::to_string(tokens_.size()));
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocab::find(std::string_view surface) const {
  auto it = index_.find(std::string(surface));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::add(std::string_view surface) {
  if (auto id = find(surface)) return *id;
  require(tokens_.size() < kMaxSize, ErrorKind::kInvalidArgument, "vocabulary overflow");
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.emplace_back(surface);
  index_.emplace(tokens_.back(), id);
  return id;
}

// ---------------------------------------------------------------------------
// Tokenization

bool is_punctuation_token(std::string_view token) {
  return token.size() == 1 && is_punct_char(token[0]);
}

std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (is_punct_char(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      current += c;
    }
  }
  flush();
  return out;
}

namespace {
std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty() && !is_punctuation_token(t)) out += ' ';
    out += t;
  }
  return out;
}
}  // namespace

std::string normalize_text(std::string_view text) { return join_tokens(tokenize_words(text)); }

Vocab build_vocab(std::span<const std::string> texts) {
  require(!texts.empty(), ErrorKind::kInvalidArgument, "build_vocab needs at least one text");
  Vocab vocab;
  for (const auto& text : texts)
    for (const auto& tok : tokenize_words(text)) vocab.add(tok);
  require(vocab.size() > kSpecialSurfaces.size(), ErrorKind::kInvalidArgument, "texts contain no tokens");
  return vocab;
}

TokenSequence encode(const Vocab& vocab, std::string_view text) {
  TokenSequence seq;
  seq.source_text = std::string(text);
  for (const auto& tok : tokenize_words(text)) seq.ids.push_back(vocab.find(tok).value_or(Vocab::kUnk));
  return seq;
}

std::string decode(const Vocab& vocab, std::span<const TokenId> ids) {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (auto id : ids) tokens.push_back(vocab.surface(id));
  return join_tokens(tokens);
}

TokenSequence frame(const TokenSequence& seq) {
  TokenSequence out;
  out.source_text = seq.source_text;
  out.ids.reserve(seq.ids.size() + 2);
  out.ids.push_back(Vocab::kBos);
  out.ids.insert(out.ids.end(), seq.ids.begin(), seq.ids.end());
  out.ids.push_back(Vocab::kEos);
  return out;
}

// ---------------------------------------------------------------------------
// Generation

std::vector<std::string> generate_articles(std::uint64_t seed, int count, int target_words) {
  require(count >= 0, ErrorKind::kInvalidArgument, "article count must be >= 0");
  require(target_words >= 20, ErrorKind::kInvalidArgument, "target_words must be >= 20");
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    out.push_back(generate_one(derive_seed(seed, static_cast<std::uint64_t>(i)), target_words));
  return out;
}

std::string rephrase(std::string_view text, std::uint64_t seed, const Vocab* vocab) {
  Rng rng(seed);
  const auto& index = category_index();
  auto tokens = tokenize_words(text);
  for (auto& tok : tokens) {
    const bool upper = starts_upper(tok);
    auto it = index.alternatives.find(tok);
    if (it == index.alternatives.end()) it = index.alternatives.find(lowercase_first(tok));
    if (it == index.alternatives.end()) continue;
    std::vector<std::string> choices;
    for (auto alt : it->second) {
      std::string cand = upper ? capitalize(alt) : std::string(alt);
      if (cand == tok) continue;
      if (vocab && !vocab->find(cand)) continue;
      choices.push_back(std::move(cand));
    }
    if (!choices.empty()) tok = choices[rng.below(choices.size())];
  }
  return join_tokens(tokens);
}

std::string leading_sentences(std::string_view text, int n) {
  std::vector<std::string> kept;
  int seen = 0;
  for (auto& tok : tokenize_words(text)) {
    if (seen >= n) break;
    const bool terminal = tok == "." || tok == "!" || tok == "?";
    kept.push_back(std::move(tok));
    if (terminal) ++seen;
  }
  return join_tokens(kept);
}

// ---------------------------------------------------------------------------
// Corpus management

std::vector<std::string> CorpusSplit::all_texts() const {
  std::vector<std::string> texts;
  for (const auto* set : {&forget_set, &retain_set, &heldout_set, &organic_set})
    for (const auto& a : *set) texts.push_back(a.text);
  return texts;
}

namespace {
int count_words(std::string_view text) {
  int n = 0;
  for (const auto& t : tokenize_words(text))
    if (!is_punctuation_token(t)) ++n;
  return n;
}

std::vector<Article> make_articles(std::uint64_t seed, int count, int words, const std::string& split) {
  std::vector<Article> out;
  const auto texts = generate_articles(seed, count, words);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    std::ostringstream id;
    id << split << '_' << std::setw(3) << std::setfill('0') << i;
    out.push_back({id.str(), split, texts[i], count_words(texts[i])});
  }
  return out;
}
}  // namespace

CorpusSplit build_corpus(const CorpusParams& params) {
  CorpusSplit split;
  split.seed = params.seed;
  split.forget_set = make_articles(derive_seed(params.seed, 1), params.forget_count, params.forget_words, "forget");
  split.retain_set = make_articles(derive_seed(params.seed, 2), params.retain_count, params.retain_words, "retain");
  split.heldout_set = make_articles(derive_seed(params.seed, 3), params.heldout_count, params.retain_words, "heldout");
  split.organic_set = make_articles(derive_seed(params.seed, 4), params.organic_count, params.organic_words, "organic");
  check_disjoint(split);
  return split;
}

void check_disjoint(const CorpusSplit& split) {
  std::set<std::string> seen;
  for (const auto* set : {&split.forget_set, &split.retain_set, &split.heldout_set, &split.organic_set})
    for (const auto& a : *set)
      require(seen.insert(a.text).second, ErrorKind::kInvalidArgument,
              "article " + a.id + " duplicates another article's text");
}

void write_corpus(const CorpusSplit& split, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorKind::kIo, "cannot create corpus directory " + dir.string());
  nlohmann::ordered_json manifest;
  manifest["generator_seed"] = split.seed;
  manifest["articles"] = nlohmann::ordered_json::array();
  for (const auto* set : {&split.forget_set, &split.retain_set, &split.heldout_set, &split.organic_set}) {
    for (const auto& a : *set) {
      const auto file = a.id + ".txt";
      std::ofstream out(dir / file, std::ios::binary);
      require(out.good(), ErrorKind::kIo, "cannot write " + (dir / file).string());
      out << a.text << '\n';
      manifest["articles"].push_back(
          {{"id", a.id}, {"split", a.split}, {"word_count", a.word_count}, {"file", file}});
    }
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  require(out.good(), ErrorKind::kIo, "cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

CorpusSplit load_corpus(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  require(in.good(), ErrorKind::kConfig, "corpus manifest not found in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIntegrity, std::string("corpus manifest unreadable: ") + e.what());
  }
  CorpusSplit split;
  split.seed = manifest.at("generator_seed").get<std::uint64_t>();
  for (const auto& entry : manifest.at("articles")) {
    Article a;
    a.id = entry.at("id").get<std::string>();
    a.split = entry.at("split").get<std::string>();
    a.word_count = entry.at("word_count").get<int>();
    std::ifstream text_in(dir / entry.at("file").get<std::string>(), std::ios::binary);
    require(text_in.good(), ErrorKind::kIo, "missing article file for " + a.id);
    std::stringstream buf;
    buf << text_in.rdbuf();
    a.text = normalize_text(buf.str());
    if (a.split == "forget") split.forget_set.push_back(std::move(a));
    else if (a.split == "retain") split.retain_set.push_back(std::move(a));
    else if (a.split == "heldout") split.heldout_set.push_back(std::move(a));
    else if (a.split == "organic") split.organic_set.push_back(std::move(a));
    else fail(ErrorKind::kIntegrity, "unknown split '" + a.split + "' in manifest");
  }
  check_disjoint(split);
  return split;
}

std::vector<TokenSequence> encode_articles(const Vocab& vocab, std::span<const Article> articles) {
  std::vector<TokenSequence> out;
  out.reserve(articles.size());
  for (const auto& a : articles) out.push_back(frame(encode(vocab, a.text)));
  return out;
}

}  // namespace unmemo
