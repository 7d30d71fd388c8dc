#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "misinfo/error.hpp"
#include "misinfo/preprocess.hpp"
#include "misinfo/rng.hpp"

namespace misinfo {

enum class Category { Cause, Cure, Prevent };

inline std::string_view to_string(Category c) {
  switch (c) {
    case Category::Cause: return "cause";
    case Category::Cure: return "cure";
    case Category::Prevent: return "prevent";
  }
  return "cause";
}

inline std::optional<Category> parse_category(std::string_view s) {
  if (s == "cause") return Category::Cause;
  if (s == "cure") return Category::Cure;
  if (s == "prevent") return Category::Prevent;
  return std::nullopt;
}

enum class BioTag : std::uint8_t { B = 0, I = 1, O = 2 };

inline constexpr std::size_t kNumTags = 3;

inline char to_char(BioTag t) { return t == BioTag::B ? 'B' : t == BioTag::I ? 'I' : 'O'; }

inline std::optional<BioTag> parse_tag(std::string_view s) {
  if (s == "B" || s == "B-anchor") return BioTag::B;
  if (s == "I" || s == "I-anchor") return BioTag::I;
  if (s == "O") return BioTag::O;
  return std::nullopt;
}

/// Half-open range. Byte offsets for anchor annotations, token indices for
/// spans recovered from BIO tags.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  friend bool operator==(const Span&, const Span&) = default;
  friend auto operator<=>(const Span&, const Span&) = default;
};

struct Tweet {
  std::string id;
  std::string raw_text;
  Category category = Category::Cause;
  std::optional<std::string> clean_text;
  std::optional<std::vector<Token>> tokens;
  // Optional precomputed categorical features per token (POS, dependency tag).
  std::vector<std::vector<std::string>> token_features;
};

struct AnnotatedTweet {
  Tweet tweet;
  bool relevant = false;
  std::vector<Span> anchor_spans;
  std::optional<std::vector<BioTag>> bio_tags;
  std::optional<bool> misinfo;
};

struct Split {
  std::vector<AnnotatedTweet> train;
  std::vector<AnnotatedTweet> val;
  std::uint64_t seed = 0;
};

/// True iff no I follows an O or opens the sequence.
inline bool well_formed(std::span<const BioTag> tags) {
  BioTag prev = BioTag::O;
  for (BioTag t : tags) {
    if (t == BioTag::I && prev == BioTag::O) return false;
    prev = t;
  }
  return true;
}

inline bool merge_annotations(std::span<const bool> votes) {
  if (votes.size() != 3)
    throw Error(ErrorKind::WrongArity, "expected 3 votes, got " + std::to_string(votes.size()));
  return std::count(votes.begin(), votes.end(), true) >= 2;
}

/// Tags tokens from byte spans. The first token overlapping a span gets B,
/// later tokens overlapping the same span get I. Partial overlap counts.
inline std::vector<BioTag> spans_to_bio(std::span<const Token> tokens, std::span<const Span> spans,
                                        std::optional<std::size_t> text_length = std::nullopt) {
  for (std::size_t k = 0; k < spans.size(); ++k) {
    const Span& s = spans[k];
    if (s.start >= s.end || (text_length && s.end > *text_length))
      throw Error(ErrorKind::SpanOutOfBounds,
                  "span [" + std::to_string(s.start) + "," + std::to_string(s.end) + ") is invalid");
    if (k > 0 && spans[k - 1].end > s.start)
      throw Error(ErrorKind::SpanOutOfBounds, "spans must be sorted and non-overlapping");
  }
  std::vector<BioTag> tags(tokens.size(), BioTag::O);
  for (const Span& s : spans) {
    bool first = true;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      if (tokens[t].end <= s.start || tokens[t].start >= s.end) continue;
      if (tags[t] != BioTag::O) continue;
      tags[t] = first ? BioTag::B : BioTag::I;
      first = false;
    }
  }
  return tags;
}

/// Token-index spans of each maximal B I* run. A stray I (not well formed)
/// starts a new span.
inline std::vector<Span> bio_to_spans(std::span<const BioTag> tags) {
  std::vector<Span> spans;
  for (std::size_t t = 0; t < tags.size(); ++t) {
    if (tags[t] == BioTag::O) continue;
    if (tags[t] == BioTag::B || t == 0 || tags[t - 1] == BioTag::O)
      spans.push_back({t, t + 1});
    else
      spans.back().end = t + 1;
  }
  return spans;
}

/// Cleans and tokenizes in place.
inline void prepare(Tweet& tweet, const CleanConfig& cfg = {}) {
  tweet.clean_text = clean(tweet.raw_text, cfg);
  tweet.tokens = tokenize(*tweet.clean_text, cfg.keep_hashtag_mark);
}

namespace detail {

inline std::string record_error(std::size_t line, const std::string& what) {
  return "line " + std::to_string(line) + ": " + what;
}

inline Tweet parse_tweet(const nlohmann::json& j, std::size_t line) {
  auto fail = [line](const std::string& what) {
    return Error(ErrorKind::MalformedRecord, record_error(line, what));
  };
  if (!j.is_object()) throw fail("record is not a JSON object");
  for (const char* key : {"id", "text", "category"})
    if (!j.contains(key) || !j[key].is_string()) throw fail(std::string("missing string field \"") + key + "\"");
  Tweet t;
  t.id = j["id"].get<std::string>();
  if (t.id.empty()) throw fail("empty id");
  t.raw_text = j["text"].get<std::string>();
  auto cat = parse_category(j["category"].get<std::string>());
  if (!cat) throw fail("category must be cause, cure or prevent");
  t.category = *cat;
  if (j.contains("token_features")) {
    const auto& tf = j["token_features"];
    if (!tf.is_array()) throw fail("token_features must be an array");
    for (const auto& row : tf) {
      if (!row.is_array()) throw fail("token_features entries must be arrays of strings");
      std::vector<std::string> feats;
      for (const auto& f : row) {
        if (!f.is_string()) throw fail("token_features entries must be arrays of strings");
        feats.push_back(f.get<std::string>());
      }
      t.token_features.push_back(std::move(feats));
    }
  }
  return t;
}

template <typename F>
void for_each_jsonl(const std::string& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorKind::MalformedRecord, path + ": " + record_error(lineno, e.what()));
    }
    try {
      f(j, lineno);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::MalformedRecord || e.kind() == ErrorKind::SpanOutOfBounds)
        throw Error(e.kind(), path + ": " + e.message());
      throw;
    }
  }
}

}  // namespace detail

/// One Tweet per JSON Lines record; blank lines are skipped.
inline std::vector<Tweet> load_tweets(const std::string& path) {
  std::vector<Tweet> out;
  std::unordered_set<std::string> seen;
  detail::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    Tweet t = detail::parse_tweet(j, line);
    if (!seen.insert(t.id).second) throw Error(ErrorKind::DuplicateId, t.id);
    out.push_back(std::move(t));
  });
  return out;
}

/// Parses one annotated record: cleans and tokenizes the text, merges votes,
/// validates anchors against the cleaned text and derives BIO tags.
inline AnnotatedTweet parse_annotated(const nlohmann::json& j, std::size_t line, const CleanConfig& cfg = {}) {
  auto fail = [line](const std::string& what) {
    return Error(ErrorKind::MalformedRecord, detail::record_error(line, what));
  };
  AnnotatedTweet a;
  a.tweet = detail::parse_tweet(j, line);
  prepare(a.tweet, cfg);

  if (j.contains("anchors")) {
    const auto& an = j["anchors"];
    if (!an.is_array()) throw fail("anchors must be an array of [start,end] pairs");
    for (const auto& pair : an) {
      if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_unsigned() || !pair[1].is_number_unsigned())
        throw fail("anchors must be an array of [start,end] pairs");
      a.anchor_spans.push_back({pair[0].get<std::size_t>(), pair[1].get<std::size_t>()});
    }
  }

  if (j.contains("relevant")) {
    const auto& r = j["relevant"];
    if (r.is_boolean()) {
      a.relevant = r.get<bool>();
    } else if (r.is_array()) {
      std::array<bool, 3> votes{};
      std::size_t n = 0;
      for (const auto& v : r) {
        if (!v.is_boolean()) throw fail("relevant votes must be booleans");
        if (n < votes.size()) votes[n] = v.get<bool>();
        ++n;
      }
      if (n != 3) throw Error(ErrorKind::WrongArity, detail::record_error(line, "expected 3 votes, got " + std::to_string(n)));
      a.relevant = merge_annotations(votes);
    } else {
      throw fail("relevant must be a boolean or an array of 3 booleans");
    }
  } else {
    a.relevant = !a.anchor_spans.empty();
  }
  if (!a.relevant && !a.anchor_spans.empty()) throw fail("non-relevant tweet carries anchors");

  if (j.contains("misinfo")) {
    if (!j["misinfo"].is_boolean()) throw fail("misinfo must be a boolean");
    a.misinfo = j["misinfo"].get<bool>();
  }

  const auto& tokens = *a.tweet.tokens;
  if (!a.tweet.token_features.empty() && a.tweet.token_features.size() != tokens.size())
    throw fail("token_features has " + std::to_string(a.tweet.token_features.size()) + " rows for " +
               std::to_string(tokens.size()) + " tokens");
  try {
    a.bio_tags = spans_to_bio(tokens, a.anchor_spans, a.tweet.clean_text->size());
  } catch (const Error& e) {
    throw Error(ErrorKind::SpanOutOfBounds, detail::record_error(line, e.message()));
  }
  return a;
}

inline std::vector<AnnotatedTweet> load_annotated(const std::string& path, const CleanConfig& cfg = {}) {
  std::vector<AnnotatedTweet> out;
  std::unordered_set<std::string> seen;
  detail::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    AnnotatedTweet a = parse_annotated(j, line, cfg);
    if (!seen.insert(a.tweet.id).second) throw Error(ErrorKind::DuplicateId, a.tweet.id);
    out.push_back(std::move(a));
  });
  return out;
}

/// Stratified 4:1 split. Each class is shuffled (Fisher-Yates over Rng(seed)),
/// floor(n/5) examples go to validation with the per-class share rounded to
/// the nearest integer, and both halves are shuffled once more.
inline Split split_dataset(const std::vector<AnnotatedTweet>& data, std::uint64_t seed) {
  const std::size_t n = data.size();
  if (n < 5) throw Error(ErrorKind::TooFewExamples, "need at least 5 examples, got " + std::to_string(n));
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < n; ++i) (data[i].relevant ? pos : neg).push_back(i);

  Rng rng(seed);
  rng.shuffle(pos);
  rng.shuffle(neg);

  const std::size_t val_n = n / 5;
  auto val_pos = static_cast<std::size_t>(std::floor(static_cast<double>(pos.size() * val_n) / n + 0.5));
  val_pos = std::min(val_pos, pos.size());
  if (val_n - val_pos > neg.size()) val_pos = val_n - neg.size();
  const std::size_t val_neg = val_n - val_pos;

  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t k = 0; k < pos.size(); ++k) (k < val_pos ? val_idx : train_idx).push_back(pos[k]);
  for (std::size_t k = 0; k < neg.size(); ++k) (k < val_neg ? val_idx : train_idx).push_back(neg[k]);
  rng.shuffle(train_idx);
  rng.shuffle(val_idx);

  Split s;
  s.seed = seed;
  for (auto i : train_idx) s.train.push_back(data[i]);
  for (auto i : val_idx) s.val.push_back(data[i]);
  return s;
}

inline nlohmann::json split_manifest(const Split& s) {
  nlohmann::json j;
  j["seed"] = s.seed;
  j["train_ids"] = nlohmann::json::array();
  j["val_ids"] = nlohmann::json::array();
  for (const auto& a : s.train) j["train_ids"].push_back(a.tweet.id);
  for (const auto& a : s.val) j["val_ids"].push_back(a.tweet.id);
  return j;
}

/// Rebuilds a Split from a manifest. Ids absent from `data` are a
/// CorpusMismatch; records not named in the manifest are ignored.
inline Split apply_manifest(const std::vector<AnnotatedTweet>& data, const nlohmann::json& manifest) {
  if (!manifest.contains("train_ids") || !manifest.contains("val_ids") || !manifest.contains("seed"))
    throw Error(ErrorKind::MalformedRecord, "split manifest needs seed, train_ids and val_ids");
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < data.size(); ++i) index.emplace(data[i].tweet.id, i);
  Split s;
  s.seed = manifest["seed"].get<std::uint64_t>();
  auto fill = [&](const nlohmann::json& ids, std::vector<AnnotatedTweet>& out) {
    for (const auto& id : ids) {
      auto it = index.find(id.get<std::string>());
      if (it == index.end()) throw Error(ErrorKind::CorpusMismatch, "manifest id not in corpus: " + id.get<std::string>());
      out.push_back(data[it->second]);
    }
  };
  fill(manifest["train_ids"], s.train);
  fill(manifest["val_ids"], s.val);
  return s;
}

}  // namespace misinfo
