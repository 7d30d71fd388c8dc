#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "misinfo/analysis.hpp"
#include "misinfo/corpus.hpp"
#include "misinfo/cure_detect.hpp"
#include "misinfo/embeddings.hpp"
#include "misinfo/error.hpp"
#include "misinfo/relevance.hpp"
#include "misinfo/rng.hpp"
#include "misinfo/tagger.hpp"

namespace misinfo::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Keys accepted in a config file; each is also a `--flag` (underscores
/// become dashes). Flags override the file.
inline const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys{
      "in",        "out",          "split",         "embeddings",  "lexicons",         "model",
      "seed",      "mode",         "variant",       "tau",         "k",                "epochs",
      "batch_size", "learning_rate", "patience",     "hidden",      "lstm_hidden",      "domain",
      "cure_terms", "misinfo_keywords", "threshold", "summary",     "keep_hashtag_mark", "min_count",
      "dim",       "window",       "negatives"};
  return keys;
}

/// Flat "key = value" text; '#' starts a comment line.
inline std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open config " + path);
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = detail::trim(t.substr(0, eq));
    if (!config_keys().contains(key)) throw UsageError(path + ":" + std::to_string(lineno) + ": unknown key \"" + key + "\"");
    out[key] = detail::trim(t.substr(eq + 1));
  }
  return out;
}

/// Effective settings for one command: config file values overlaid by flags.
class Settings {
 public:
  Settings(std::string command, std::map<std::string, std::string> values)
      : command_(std::move(command)), values_(std::move(values)) {}

  const std::string& command() const { return command_; }
  bool has(const std::string& key) const { return values_.contains(key); }

  std::string str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError(command_ + ": --" + flag_name(key) + " is required");
    return it->second;
  }
  std::string str(const std::string& key, const std::string& fallback) const { return has(key) ? str(key) : fallback; }

  template <typename T>
  T num(const std::string& key, T fallback) const {
    if (!has(key)) return fallback;
    const std::string s = str(key);
    T v{};
    std::istringstream ss(s);
    ss >> v;
    if (!ss || !ss.eof()) throw UsageError(command_ + ": bad value for --" + flag_name(key) + ": " + s);
    return v;
  }

  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    if (!has(key)) return out;
    std::stringstream ss(str(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = detail::trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  std::uint64_t seed() const { return num<std::uint64_t>("seed", 1); }

  /// FNV-1a over the canonical "key=value\n" listing of the settings.
  std::string digest() const {
    std::string canon = "command=" + command_ + "\n";
    for (const auto& [k, v] : values_) canon += k + "=" + v + "\n";
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canon)));
    return buf;
  }

  nlohmann::json provenance() const {
    return {{"command", command_}, {"seed", seed()}, {"config_digest", digest()}};
  }

  static std::string flag_name(std::string key) {
    std::replace(key.begin(), key.end(), '_', '-');
    return key;
  }

 private:
  std::string command_;
  std::map<std::string, std::string> values_;
};

namespace detail {

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path);
}

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::MalformedRecord, path + ": " + e.what());
  }
}

inline void require_file(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw Error(ErrorKind::Io, "no such file: " + path);
}

inline std::string fixed4(double x) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(4) << x;
  return ss.str();
}

/// JSON Lines outputs get a provenance sidecar next to them.
inline void write_sidecar(const std::string& out, const Settings& s, std::size_t records) {
  nlohmann::json meta = s.provenance();
  meta["records"] = records;
  write_text(out + ".meta.json", meta.dump(2) + "\n");
}

inline nlohmann::json tokens_json(const std::vector<Token>& tokens) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& t : tokens) arr.push_back({{"text", t.text}, {"start", t.start}, {"end", t.end}});
  return arr;
}

inline std::string tags_string(std::span<const BioTag> tags) {
  std::string s;
  for (BioTag t : tags) s += to_char(t);
  return s;
}

inline CleanConfig clean_config(const Settings& s) {
  CleanConfig cfg;
  cfg.keep_hashtag_mark = s.num<int>("keep_hashtag_mark", 0) != 0;
  return cfg;
}

inline std::vector<Tweet> load_prepared_tweets(const Settings& s) {
  const std::string in = s.str("in");
  require_file(in);
  auto tweets = load_tweets(in);
  const auto cfg = clean_config(s);
  for (auto& t : tweets) prepare(t, cfg);
  return tweets;
}

inline std::optional<Category> domain_filter(const Settings& s) {
  if (!s.has("domain") || s.str("domain") == "all") return std::nullopt;
  auto c = parse_category(s.str("domain"));
  if (!c) throw UsageError(s.command() + ": --domain must be cause, cure, prevent or all");
  return c;
}

inline std::vector<AnnotatedTweet> filter_domain(std::vector<AnnotatedTweet> data, std::optional<Category> d) {
  if (!d) return data;
  std::erase_if(data, [&](const AnnotatedTweet& a) { return a.tweet.category != *d; });
  return data;
}

/// Training split: --split manifest when given, else a fresh seeded split.
/// Domain filtering happens after the split so manifests stay corpus-wide.
inline Split training_split(const Settings& s) {
  const std::string in = s.str("in");
  require_file(in);
  const auto data = load_annotated(in, clean_config(s));
  Split split;
  if (s.has("split")) {
    require_file(s.str("split"));
    split = apply_manifest(data, read_json(s.str("split")));
  } else {
    split = split_dataset(data, s.seed());
  }
  const auto d = domain_filter(s);
  split.train = filter_domain(std::move(split.train), d);
  split.val = filter_domain(std::move(split.val), d);
  return split;
}

/// Evaluation data: validation half of --split when given, else all of --in.
inline std::vector<AnnotatedTweet> evaluation_data(const Settings& s) {
  const std::string in = s.str("in");
  require_file(in);
  auto data = load_annotated(in, clean_config(s));
  if (s.has("split")) {
    require_file(s.str("split"));
    data = apply_manifest(data, read_json(s.str("split"))).val;
  }
  return data;
}

inline std::shared_ptr<const EmbeddingTable> load_table(const std::string& path) {
  require_file(path);
  return std::make_shared<const EmbeddingTable>(load_embeddings(path));
}

inline std::string domain_label(const Settings& s) { return s.str("domain", "all"); }

inline std::vector<std::string> models_of(const Settings& s) {
  auto m = s.list("model");
  if (m.empty()) throw UsageError(s.command() + ": --model is required");
  for (const auto& p : m) require_file(p);
  return m;
}

inline std::string embeddings_for(const Settings& s, const nlohmann::json& meta) {
  if (s.has("embeddings")) return s.str("embeddings");
  if (meta.contains("embeddings") && meta["embeddings"].is_string()) return meta["embeddings"].get<std::string>();
  throw UsageError(s.command() + ": --embeddings is required for this model");
}

inline std::function<void(std::size_t, double, double)> epoch_logger(std::ostream& err) {
  return [&err](std::size_t epoch, double loss, double f1) {
    err << "epoch " << epoch << " loss " << fixed4(loss) << " val_f1 " << fixed4(f1) << "\n";
  };
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

inline int cmd_preprocess(const Settings& s, std::ostream& out) {
  const std::string in = s.str("in"), dst = s.str("out");
  detail::require_file(in);
  const auto cfg = detail::clean_config(s);
  std::string text;
  std::size_t n = 0;
  std::set<std::string> seen;
  misinfo::detail::for_each_jsonl(in, [&](const nlohmann::json& j, std::size_t line) {
    Tweet t = misinfo::detail::parse_tweet(j, line);
    if (!seen.insert(t.id).second) throw Error(ErrorKind::DuplicateId, t.id);
    prepare(t, cfg);
    nlohmann::json rec = j;
    rec["clean_text"] = *t.clean_text;
    rec["tokens"] = detail::tokens_json(*t.tokens);
    text += rec.dump() + "\n";
    ++n;
  });
  detail::write_text(dst, text);
  detail::write_sidecar(dst, s, n);
  out << "preprocessed " << n << " tweets -> " << dst << "\n";
  return kExitOk;
}

inline int cmd_train_embeddings(const Settings& s, std::ostream& out, std::ostream& err) {
  const auto tweets = detail::load_prepared_tweets(s);
  std::vector<std::vector<std::string>> sentences;
  for (const auto& t : tweets) sentences.push_back(relevance_tokens(t));
  SkipgramConfig cfg;
  cfg.dim = s.num<std::size_t>("dim", cfg.dim);
  cfg.window = s.num<std::size_t>("window", cfg.window);
  cfg.negatives = s.num<std::size_t>("negatives", cfg.negatives);
  cfg.epochs = s.num<std::size_t>("epochs", cfg.epochs);
  cfg.learning_rate = s.num<double>("learning_rate", cfg.learning_rate);
  cfg.min_count = s.num<std::size_t>("min_count", cfg.min_count);
  cfg.seed = s.seed();
  const auto result = train_skipgram_detailed(sentences, cfg);
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
    err << "epoch " << e + 1 << " loss " << detail::fixed4(result.epoch_loss[e]) << "\n";
  save_embeddings(result.input, s.str("out"));
  detail::write_sidecar(s.str("out"), s, result.input.size());
  out << "trained " << result.input.size() << " word vectors -> " << s.str("out") << "\n";
  return kExitOk;
}

inline int cmd_split(const Settings& s, std::ostream& out) {
  const std::string in = s.str("in");
  detail::require_file(in);
  const auto data = load_annotated(in, detail::clean_config(s));
  const Split split = split_dataset(data, s.seed());
  nlohmann::json j = split_manifest(split);
  j["config_digest"] = s.digest();
  detail::write_text(s.str("out"), j.dump(2) + "\n");
  out << "split " << data.size() << " tweets: " << split.train.size() << " train, " << split.val.size() << " val\n";
  return kExitOk;
}

inline int cmd_train_relevance(const Settings& s, std::ostream& out, std::ostream& err) {
  const auto mode = parse_mode(s.str("mode", "weighted"));
  if (!mode) throw UsageError("train-relevance: --mode must be tfidf or weighted");
  const Split split = detail::training_split(s);
  std::shared_ptr<const EmbeddingTable> emb;
  if (*mode == RelevanceMode::Weighted) emb = detail::load_table(s.str("embeddings"));

  RelevanceConfig cfg;
  if (s.has("hidden")) {
    cfg.hidden.clear();
    for (const auto& h : s.list("hidden")) {
      try {
        cfg.hidden.push_back(std::stol(h));
      } catch (const std::exception&) {
        throw UsageError("train-relevance: bad --hidden entry " + h);
      }
    }
  }
  cfg.epochs = s.num<std::size_t>("epochs", cfg.epochs);
  cfg.batch_size = s.num<std::size_t>("batch_size", cfg.batch_size);
  cfg.learning_rate = s.num<double>("learning_rate", cfg.learning_rate);
  cfg.patience = s.num<std::size_t>("patience", cfg.patience);
  cfg.decision_threshold = s.num<double>("threshold", cfg.decision_threshold);
  cfg.seed = s.seed();
  cfg.on_epoch = detail::epoch_logger(err);

  RelevanceModel model = train_relevance(split, *mode, emb, cfg);
  nlohmann::json meta = s.provenance();
  meta["domain"] = detail::domain_label(s);
  if (emb) meta["embeddings"] = s.str("embeddings");
  meta["train_size"] = split.train.size();
  meta["val_size"] = split.val.size();
  if (!split.val.empty()) meta["val_metrics"] = to_json(evaluate_relevance(model, split.val));
  save_relevance(model, s.str("out"), std::move(meta));
  out << "saved relevance model (" << to_string(*mode) << ") -> " << s.str("out") << "\n";
  return kExitOk;
}

inline int cmd_eval_relevance(const Settings& s, std::ostream& out) {
  const auto data = detail::evaluation_data(s);
  nlohmann::json entries = nlohmann::json::array();
  // domain -> mode -> metrics, for the rendered table
  std::map<std::string, std::map<std::string, Metrics>> table;
  for (const auto& path : detail::models_of(s)) {
    const auto doc = read_model_file(path);
    const auto& meta = doc["meta"];
    const std::string mode = meta.value("mode", "");
    std::shared_ptr<const EmbeddingTable> emb;
    if (mode != "tfidf") emb = detail::load_table(detail::embeddings_for(s, meta));
    RelevanceModel model = load_relevance(path, emb);
    const std::string domain = meta.value("domain", std::string("all"));
    const auto d = domain == "all" ? std::nullopt : parse_category(domain);
    const auto subset = detail::filter_domain(data, d);
    const Metrics m = evaluate_relevance(model, subset);
    table[domain][mode] = m;
    entries.push_back({{"model", std::filesystem::path(path).filename().string()},
                       {"domain", domain},
                       {"mode", mode},
                       {"f1", m.f1},
                       {"accuracy", m.accuracy},
                       {"precision", m.precision},
                       {"recall", m.recall},
                       {"examples", subset.size()}});
  }
  nlohmann::json report = s.provenance();
  report["report"] = "medical_relevance";
  report["entries"] = entries;

  std::ostringstream t;
  t << "Medical relevance detection\n";
  t << std::left << std::setw(10) << "Domain" << std::setw(24) << "tfidf F1 / Accuracy" << "weighted F1 / Accuracy\n";
  for (const auto& [domain, modes] : table) {
    t << std::left << std::setw(10) << domain;
    for (const char* mode : {"tfidf", "weighted"}) {
      auto it = modes.find(mode);
      const std::string cell = it == modes.end() ? "-" : detail::fixed4(it->second.f1) + " / " + detail::fixed4(it->second.accuracy);
      t << std::setw(24) << cell;
    }
    t << "\n";
  }
  report["table"] = t.str();
  if (s.has("out")) detail::write_text(s.str("out"), report.dump(2) + "\n");
  out << t.str();
  return kExitOk;
}

inline int cmd_train_tagger(const Settings& s, std::ostream& out, std::ostream& err) {
  const auto variant = parse_variant(s.str("variant", "attn-bilstm-crf"));
  if (!variant) throw UsageError("train-tagger: unknown --variant " + s.str("variant"));
  const Split split = detail::training_split(s);
  const auto emb = detail::load_table(s.str("embeddings"));
  TaggerConfig cfg;
  cfg.lstm_hidden = s.num<nn::Index>("lstm_hidden", cfg.lstm_hidden);
  cfg.epochs = s.num<std::size_t>("epochs", cfg.epochs);
  cfg.batch_size = s.num<std::size_t>("batch_size", cfg.batch_size);
  cfg.learning_rate = s.num<double>("learning_rate", cfg.learning_rate);
  cfg.patience = s.num<std::size_t>("patience", cfg.patience);
  cfg.seed = s.seed();
  cfg.on_epoch = detail::epoch_logger(err);

  TaggerModel model = train_tagger(split, *variant, emb, cfg);
  nlohmann::json meta = s.provenance();
  meta["domain"] = detail::domain_label(s);
  meta["embeddings"] = s.str("embeddings");
  meta["train_size"] = split.train.size();
  meta["val_size"] = split.val.size();
  if (!split.val.empty()) {
    const auto m = evaluate_tagger(model, split.val);
    meta["val_metrics"] = {{"span", to_json(m.span)}, {"token", to_json(m.token)}};
  }
  save_tagger(model, s.str("out"), std::move(meta));
  out << "saved tagger (" << to_string(*variant) << ") -> " << s.str("out") << "\n";
  return kExitOk;
}

inline std::string method_label(const TaggerModel& model, const std::string& embeddings_path) {
  std::string label = std::string(to_string(model.variant)) + " (" +
                      std::filesystem::path(embeddings_path).stem().string();
  if (!model.feature_values.empty()) label += " + " + std::to_string(model.feature_values.size()) + " token features";
  return label + ")";
}

inline int cmd_eval_tagger(const Settings& s, std::ostream& out) {
  const auto data = detail::evaluation_data(s);
  nlohmann::json entries = nlohmann::json::array();
  std::map<std::string, std::map<std::string, double>> table;  // method -> domain -> span F1
  std::set<std::string> domains;
  std::vector<std::string> methods;
  for (const auto& path : detail::models_of(s)) {
    const auto doc = read_model_file(path);
    const auto& meta = doc["meta"];
    const std::string emb_path = detail::embeddings_for(s, meta);
    TaggerModel model = load_tagger(path, detail::load_table(emb_path));
    const std::string domain = meta.value("domain", std::string("all"));
    const auto d = domain == "all" ? std::nullopt : parse_category(domain);
    const auto subset = detail::filter_domain(data, d);
    const auto m = evaluate_tagger(model, subset);
    const std::string method = method_label(model, emb_path);
    if (!table.contains(method)) methods.push_back(method);
    table[method][domain] = m.span.f1;
    domains.insert(domain);
    entries.push_back({{"model", std::filesystem::path(path).filename().string()},
                       {"method", method},
                       {"variant", to_string(model.variant)},
                       {"domain", domain},
                       {"f1", m.span.f1},
                       {"precision", m.span.precision},
                       {"recall", m.span.recall},
                       {"span_accuracy", m.span.accuracy},
                       {"token_f1", m.token.f1},
                       {"examples", subset.size()}});
  }
  nlohmann::json report = s.provenance();
  report["report"] = "anchor_detection";
  report["entries"] = entries;

  std::ostringstream t;
  t << "Anchor detection\n" << std::left << std::setw(48) << "Method";
  for (const auto& d : domains) t << std::setw(16) << ("F1 - " + d);
  t << "\n";
  for (const auto& method : methods) {
    t << std::left << std::setw(48) << method;
    for (const auto& d : domains) {
      auto it = table[method].find(d);
      t << std::setw(16) << (it == table[method].end() ? "-" : detail::fixed4(it->second));
    }
    t << "\n";
  }
  report["table"] = t.str();
  if (s.has("out")) detail::write_text(s.str("out"), report.dump(2) + "\n");
  out << t.str();
  return kExitOk;
}

inline int cmd_tag(const Settings& s, std::ostream& out) {
  const auto tweets = detail::load_prepared_tweets(s);
  const auto paths = detail::models_of(s);
  const auto doc = read_model_file(paths.front());
  TaggerModel model = load_tagger(paths.front(), detail::load_table(detail::embeddings_for(s, doc["meta"])));
  std::string text;
  for (const auto& t : tweets) {
    std::vector<BioTag> tags;
    if (!t.tokens->empty()) tags = tag(model, t);
    nlohmann::json rec{{"id", t.id},
                       {"category", to_string(t.category)},
                       {"clean_text", *t.clean_text},
                       {"tokens", detail::tokens_json(*t.tokens)},
                       {"tags", detail::tags_string(tags)},
                       {"anchors", extract_anchors(*t.tokens, tags)}};
    text += rec.dump() + "\n";
  }
  detail::write_text(s.str("out"), text);
  detail::write_sidecar(s.str("out"), s, tweets.size());
  out << "tagged " << tweets.size() << " tweets -> " << s.str("out") << "\n";
  return kExitOk;
}

inline int cmd_detect_cure(const Settings& s, std::ostream& out) {
  const auto tweets = detail::load_prepared_tweets(s);
  const auto emb = detail::load_table(s.str("embeddings"));
  std::vector<std::string> terms = default_cure_terms();
  if (s.has("cure_terms")) {
    detail::require_file(s.str("cure_terms"));
    terms = load_cure_terms(s.str("cure_terms"));
  }
  const CureLexicon lexicon(*emb, terms);
  CureConfig cfg;
  cfg.tau = s.num<double>("tau", cfg.tau);
  if (!(cfg.tau > 0 && cfg.tau < 1)) throw UsageError("detect-cure: --tau must lie in (0, 1)");
  std::string text;
  std::size_t candidates = 0;
  for (const auto& t : tweets) {
    const auto hits = detect_cure_anchor(std::span<const Token>(*t.tokens), *emb, lexicon, cfg);
    nlohmann::json jh = nlohmann::json::array();
    for (const auto& h : hits) {
      std::string surface = (*t.tokens)[h.start].text;
      if (h.length == 2) surface += " " + (*t.tokens)[h.start + 1].text;
      jh.push_back({{"start", h.start}, {"length", h.length}, {"text", surface}, {"s1", h.s1}, {"term", h.term}});
    }
    const auto verdict = hits.empty() ? CureVerdict::MisinfoCandidate : CureVerdict::ProvenCurePresent;
    candidates += verdict == CureVerdict::MisinfoCandidate;
    text += nlohmann::json{{"id", t.id}, {"verdict", to_string(verdict)}, {"tau", cfg.tau}, {"hits", jh}}.dump() + "\n";
  }
  detail::write_text(s.str("out"), text);
  detail::write_sidecar(s.str("out"), s, tweets.size());
  out << candidates << " of " << tweets.size() << " tweets flagged as misinfo candidates -> " << s.str("out") << "\n";
  return kExitOk;
}

/// Anchor strings per record: an "anchors" array of strings (tagger output)
/// or of [start, end] spans into the cleaned text (annotations).
inline std::vector<std::pair<std::vector<std::string>, std::optional<bool>>> load_anchor_records(const Settings& s) {
  const std::string in = s.str("in");
  detail::require_file(in);
  const auto cfg = detail::clean_config(s);
  const auto d = detail::domain_filter(s);
  std::vector<std::pair<std::vector<std::string>, std::optional<bool>>> out;
  misinfo::detail::for_each_jsonl(in, [&](const nlohmann::json& j, std::size_t line) {
    const bool string_anchors = j.contains("anchors") && j["anchors"].is_array() && !j["anchors"].empty() &&
                                j["anchors"][0].is_string();
    std::vector<std::string> anchors;
    std::optional<bool> misinfo;
    if (string_anchors) {
      if (d) {
        const auto c = j.contains("category") && j["category"].is_string()
                           ? parse_category(j["category"].get<std::string>())
                           : std::nullopt;
        if (!c) throw Error(ErrorKind::MalformedRecord, in + ": line " + std::to_string(line) + ": missing category");
        if (*c != *d) return;
      }
      for (const auto& a : j["anchors"]) anchors.push_back(a.get<std::string>());
      if (j.contains("misinfo") && j["misinfo"].is_boolean()) misinfo = j["misinfo"].get<bool>();
    } else {
      const AnnotatedTweet a = parse_annotated(j, line, cfg);
      if (d && a.tweet.category != *d) return;
      for (const auto& sp : a.anchor_spans) anchors.push_back(a.tweet.clean_text->substr(sp.start, sp.end - sp.start));
      misinfo = a.misinfo;
    }
    out.emplace_back(std::move(anchors), misinfo);
  });
  return out;
}

inline int cmd_keywords(const Settings& s, std::ostream& out) {
  const auto k = s.num<std::size_t>("k", 20);
  if (k < 1) throw UsageError("keywords: --k must be at least 1");
  const auto records = load_anchor_records(s);
  std::vector<std::string> all;
  std::vector<std::vector<std::string>> per_tweet;
  std::set<std::string> misinfo_stems;
  for (const auto& [anchors, misinfo] : records) {
    all.insert(all.end(), anchors.begin(), anchors.end());
    per_tweet.push_back(anchors);
    if (misinfo && *misinfo)
      for (const auto& a : anchors) misinfo_stems.insert(stem_phrase(a));
  }
  if (s.has("misinfo_keywords")) {
    detail::require_file(s.str("misinfo_keywords"));
    misinfo_stems.clear();
    for (const auto& term : load_cure_terms(s.str("misinfo_keywords"))) misinfo_stems.insert(stem_phrase(term));
  }
  const auto top = top_keywords(all, k);
  std::set<std::string> top_set;
  nlohmann::json jtop = nlohmann::json::array();
  for (const auto& [kw, c] : top) {
    top_set.insert(kw);
    jtop.push_back({{"keyword", kw}, {"count", c}, {"misinfo", misinfo_stems.contains(kw)}});
  }
  const double spread = keyword_spread(per_tweet, top_set, misinfo_stems);
  nlohmann::json report = s.provenance();
  report["k"] = k;
  report["tweets"] = per_tweet.size();
  report["top_keywords"] = jtop;
  report["misinfo_keywords"] = misinfo_stems;
  report["spread"] = spread;
  if (s.has("out")) detail::write_text(s.str("out"), report.dump(2) + "\n");
  for (const auto& [kw, c] : top) out << c << "\t" << kw << (misinfo_stems.contains(kw) ? "\t*" : "") << "\n";
  out << "spread " << detail::fixed4(spread) << "\n";
  return kExitOk;
}

inline int cmd_compare(const Settings& s, std::ostream& out) {
  const std::string in = s.str("in");
  detail::require_file(in);
  std::vector<Lexicon> lexicons;
  for (const auto& p : s.list("lexicons")) {
    detail::require_file(p);
    lexicons.push_back(load_lexicon(p));
  }
  if (lexicons.empty()) throw UsageError("compare: --lexicons is required");
  const auto d = detail::domain_filter(s);
  std::vector<std::vector<std::string>> mis, cor;
  for (const auto& a : detail::filter_domain(load_annotated(in, detail::clean_config(s)), d)) {
    if (!a.misinfo) continue;
    (*a.misinfo ? mis : cor).push_back(relevance_tokens(a.tweet));
  }
  const auto rows = compare_groups(mis, cor, lexicons);
  const std::string dst = s.str("out");
  const auto prov = s.provenance();
  detail::write_text(dst, "# seed=" + std::to_string(s.seed()) + " config_digest=" + s.digest() + "\n" +
                              comparisons_to_tsv(rows));
  nlohmann::json summary = comparisons_summary(rows, mis.size(), cor.size());
  summary.update(prov);
  const std::string summary_path = s.str("summary", dst + ".summary.json");
  detail::write_text(summary_path, summary.dump(2) + "\n");
  out << summary["significant_count"].get<std::size_t>() << " of " << rows.size()
      << " features differ at p < 0.05 -> " << dst << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct CommandSpec {
  const char* name;
  const char* help;
  std::vector<std::string> keys;
};

inline const std::vector<CommandSpec>& commands() {
  static const std::vector<CommandSpec> specs{
      {"preprocess", "Clean and tokenize a tweet JSONL file", {"in", "out", "keep_hashtag_mark"}},
      {"train-embeddings",
       "Train skip-gram word vectors on tweet text",
       {"in", "out", "dim", "window", "negatives", "epochs", "learning_rate", "min_count", "keep_hashtag_mark"}},
      {"split", "Write a stratified 4:1 train/validation manifest", {"in", "out", "keep_hashtag_mark"}},
      {"train-relevance",
       "Train the relevance classifier",
       {"in", "out", "split", "mode", "embeddings", "domain", "hidden", "epochs", "batch_size", "learning_rate",
        "patience", "threshold", "keep_hashtag_mark"}},
      {"eval-relevance", "Relevance report (F1 and accuracy per domain and mode)",
       {"in", "out", "split", "model", "embeddings", "keep_hashtag_mark"}},
      {"train-tagger",
       "Train an anchor tagger",
       {"in", "out", "split", "variant", "embeddings", "domain", "lstm_hidden", "epochs", "batch_size",
        "learning_rate", "patience", "keep_hashtag_mark"}},
      {"eval-tagger", "Anchor detection report (span F1 per method and domain)",
       {"in", "out", "split", "model", "embeddings", "keep_hashtag_mark"}},
      {"tag", "Tag anchors in a tweet JSONL file", {"in", "out", "model", "embeddings", "keep_hashtag_mark"}},
      {"detect-cure", "Flag cure tweets that mention no proven cure",
       {"in", "out", "embeddings", "tau", "cure_terms", "keep_hashtag_mark"}},
      {"keywords", "Top-k stemmed anchors and misinformation spread",
       {"in", "out", "k", "domain", "misinfo_keywords", "keep_hashtag_mark"}},
      {"compare", "Lexicon feature statistics between misinformed and correct tweets",
       {"in", "out", "summary", "lexicons", "domain", "keep_hashtag_mark"}},
  };
  return specs;
}

inline int dispatch(const Settings& s, std::ostream& out, std::ostream& err) {
  const std::string& c = s.command();
  if (c == "preprocess") return cmd_preprocess(s, out);
  if (c == "train-embeddings") return cmd_train_embeddings(s, out, err);
  if (c == "split") return cmd_split(s, out);
  if (c == "train-relevance") return cmd_train_relevance(s, out, err);
  if (c == "eval-relevance") return cmd_eval_relevance(s, out);
  if (c == "train-tagger") return cmd_train_tagger(s, out, err);
  if (c == "eval-tagger") return cmd_eval_tagger(s, out);
  if (c == "tag") return cmd_tag(s, out);
  if (c == "detect-cure") return cmd_detect_cure(s, out);
  if (c == "keywords") return cmd_keywords(s, out);
  if (c == "compare") return cmd_compare(s, out);
  throw UsageError("unknown command " + c);
}

/// Entry point. Exit codes: 0 success, 1 usage error, 2 data error.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Cancer misinformation pipeline", "misinfo"};
  app.require_subcommand(1);
  std::map<CLI::App*, std::map<std::string, std::string>> flags;
  std::map<CLI::App*, std::map<std::string, std::vector<std::string>>> lists;
  std::map<CLI::App*, std::string> config_path;
  for (const auto& spec : commands()) {
    CLI::App* sub = app.add_subcommand(spec.name, spec.help);
    sub->add_option("--config", config_path[sub], "key=value settings file");
    sub->add_option("--seed", flags[sub]["seed"], "random seed (default 1)");
    for (const auto& key : spec.keys) {
      const std::string flag = "--" + Settings::flag_name(key);
      if (key == "model" || key == "lexicons")
        sub->add_option(flag, lists[sub][key], key + " path (repeatable)");
      else
        sub->add_option(flag, flags[sub][key], key);
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code != 0 && dynamic_cast<const CLI::CallForHelp*>(&e) == nullptr) err << app.help();
    return code == 0 ? kExitOk : kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    std::map<std::string, std::string> values;
    if (!config_path[sub].empty()) values = read_config_file(config_path[sub]);
    for (auto* opt : sub->get_options()) {
      if (opt->count() == 0) continue;
      std::string key = opt->get_name();
      key.erase(0, key.find_first_not_of('-'));
      std::replace(key.begin(), key.end(), '-', '_');
      if (key == "config" || key == "help") continue;
      if (lists[sub].contains(key)) {
        std::string joined;
        for (const auto& v : lists[sub][key]) joined += (joined.empty() ? "" : ",") + v;
        values[key] = joined;
      } else {
        values[key] = flags[sub][key];
      }
    }
    return dispatch(Settings(sub->get_name(), std::move(values)), out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n" << sub->help();
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace misinfo::cli
