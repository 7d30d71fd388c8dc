// Shared fixtures for the unit and acceptance tests.
#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "misinfo/cli.hpp"
#include "misinfo/corpus.hpp"
#include "misinfo/embeddings.hpp"
#include "misinfo/rng.hpp"

namespace testing_support {

using misinfo::AnnotatedTweet;
using misinfo::EmbeddingTable;
using misinfo::RowMatrix;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("misinfo_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Gaussian vectors for each word, seeded.
inline std::shared_ptr<const EmbeddingTable> random_table(const std::vector<std::string>& words, std::size_t dim,
                                                          std::uint64_t seed) {
  misinfo::Rng rng(seed);
  RowMatrix m(static_cast<Eigen::Index>(words.size()), static_cast<Eigen::Index>(dim));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.normal();
  return std::make_shared<const EmbeddingTable>(words, m);
}

/// One JSONL record with byte-offset anchors into `text` (text is already
/// clean, so cleaned offsets equal raw offsets).
inline nlohmann::json record(const std::string& id, const std::string& text, const std::string& category,
                             const std::vector<std::string>& anchors, bool relevant) {
  nlohmann::json j{{"id", id}, {"text", text}, {"category", category}, {"relevant", relevant}};
  j["anchors"] = nlohmann::json::array();
  std::size_t from = 0;
  for (const auto& a : anchors) {
    const auto pos = text.find(a, from);
    j["anchors"].push_back({pos, pos + a.size()});
    from = pos + a.size();
  }
  return j;
}

inline std::string to_jsonl(const std::vector<nlohmann::json>& records) {
  std::string s;
  for (const auto& r : records) s += r.dump() + "\n";
  return s;
}

inline const std::vector<std::string>& anchor_heads() {
  static const std::vector<std::string> w{"processed", "red", "burnt", "smoked", "fried", "cured", "grilled", "charred"};
  return w;
}
inline const std::vector<std::string>& anchor_tails() {
  static const std::vector<std::string> w{"meats", "sugar", "bacon", "coffee", "toast", "sausage", "ham", "steak"};
  return w;
}
inline const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> w{"causes", "cancer", "new", "study", "says", "doctors", "warn", "that",
                                          "experts", "claim", "really", "today"};
  return w;
}

/// Planted-anchor records built from templates around "X Y causes cancer".
inline std::vector<nlohmann::json> planted_records(std::size_t n, std::uint64_t seed, const std::string& prefix) {
  static const std::vector<std::pair<std::string, std::string>> templates{
      {"", " causes cancer"},
      {"new study says ", " causes cancer"},
      {"doctors warn that ", " causes cancer"},
      {"experts claim ", " causes cancer today"},
      {"", " really causes cancer says study"},
  };
  misinfo::Rng rng(seed);
  std::vector<nlohmann::json> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& [pre, post] = templates[rng.below(templates.size())];
    const std::string anchor =
        anchor_heads()[rng.below(anchor_heads().size())] + " " + anchor_tails()[rng.below(anchor_tails().size())];
    out.push_back(record(prefix + std::to_string(i), pre + anchor + post, "cause", {anchor}, true));
  }
  return out;
}

inline std::vector<AnnotatedTweet> parse_records(const std::vector<nlohmann::json>& records) {
  std::vector<AnnotatedTweet> out;
  for (std::size_t i = 0; i < records.size(); ++i) out.push_back(misinfo::parse_annotated(records[i], i + 1));
  return out;
}

inline std::vector<std::string> planted_vocabulary() {
  std::vector<std::string> v = anchor_heads();
  v.insert(v.end(), anchor_tails().begin(), anchor_tails().end());
  v.insert(v.end(), filler_words().begin(), filler_words().end());
  return v;
}

/// Two word pools, one per class, with embeddings scattered around +mu and
/// -mu. Each tweet is three words from its class pool.
struct SeparableFixture {
  std::shared_ptr<const EmbeddingTable> table;
  std::vector<nlohmann::json> records;
};

inline SeparableFixture separable_fixture(std::size_t n, std::size_t dim, std::uint64_t seed) {
  misinfo::Rng rng(seed);
  const std::size_t pool = 30;
  std::vector<std::string> words;
  RowMatrix m(static_cast<Eigen::Index>(2 * pool), static_cast<Eigen::Index>(dim));
  for (std::size_t cls = 0; cls < 2; ++cls)
    for (std::size_t k = 0; k < pool; ++k) {
      const auto r = static_cast<Eigen::Index>(words.size());
      words.push_back((cls ? "pos" : "neg") + std::to_string(k));
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = (cls ? 1.0 : -1.0) + 0.5 * rng.normal();
    }
  SeparableFixture f;
  f.table = std::make_shared<const EmbeddingTable>(words, m);
  for (std::size_t i = 0; i < n; ++i) {
    const bool pos = i % 2 == 0;
    std::string text;
    for (int w = 0; w < 3; ++w) {
      if (w) text += ' ';
      text += (pos ? "pos" : "neg") + std::to_string(rng.below(pool));
    }
    f.records.push_back({{"id", "s" + std::to_string(i)}, {"text", text}, {"category", "cause"}, {"relevant", pos}});
  }
  return f;
}

/// One-hot vectors: every word is orthogonal to every other, so proven-cure
/// terms match themselves exactly and nothing else.
inline std::shared_ptr<const EmbeddingTable> cure_fixture_table() {
  const std::vector<std::string> words{"chemotherapy", "radiation", "therapy", "immunotherapy", "targeted", "hormone",
                                       "carrot",       "juice",     "cures",   "cancer",        "hemp",     "oil",
                                       "my",           "aunt",      "beat",    "with"};
  RowMatrix m = RowMatrix::Identity(static_cast<Eigen::Index>(words.size()), static_cast<Eigen::Index>(words.size()));
  return std::make_shared<const EmbeddingTable>(words, m);
}

struct CliResult {
  int code = 0;
  std::string out, err;
};

/// Runs the command-line entry point in-process.
inline CliResult run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"misinfo"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.code = misinfo::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

inline const std::vector<std::string>& offtopic_words() {
  static const std::vector<std::string> w{"weather", "is", "nice", "game", "tonight", "love", "this", "song",
                                          "traffic", "was", "bad", "coffee"};
  return w;
}

/// A small annotated corpus with planted cause anchors, cure tweets and
/// irrelevant chatter, plus a matching embedding file. Returns the paths.
struct CliCorpus {
  std::string tweets, embeddings;
};

inline CliCorpus write_cli_corpus(const TempDir& dir, std::size_t n = 40, std::uint64_t seed = 3) {
  auto records = planted_records(n, seed, "c");
  misinfo::Rng rng(seed + 7);
  const std::vector<std::string> cures{"hemp oil", "carrot juice", "chemotherapy", "radiation therapy"};
  for (std::size_t i = 0; i < n / 2; ++i) {
    const std::string& cure = cures[rng.below(cures.size())];
    auto r = record("k" + std::to_string(i), "my aunt beat cancer with " + cure, "cure", {cure}, true);
    r["misinfo"] = cure == "hemp oil" || cure == "carrot juice";
    records.push_back(r);
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::string text;
    for (int w = 0; w < 4; ++w) text += (w ? " " : "") + offtopic_words()[rng.below(offtopic_words().size())];
    records.push_back(record("o" + std::to_string(i), text, i % 2 ? "cause" : "cure", {}, false));
  }
  for (std::size_t i = 0; i < n; ++i)
    if (records[i].value("id", "").starts_with("c")) records[i]["misinfo"] = i % 3 != 0;
  write_file(dir.file("tweets.jsonl"), to_jsonl(records));

  std::vector<std::string> vocab = planted_vocabulary();
  for (const auto& w : offtopic_words())
    if (std::find(vocab.begin(), vocab.end(), w) == vocab.end()) vocab.push_back(w);
  const auto cure_table = cure_fixture_table();
  for (const auto& w : cure_table->vocab())
    if (std::find(vocab.begin(), vocab.end(), w) == vocab.end()) vocab.push_back(w);
  misinfo::save_embeddings(*random_table(vocab, 6, seed), dir.file("emb.txt"));
  return {dir.file("tweets.jsonl"), dir.file("emb.txt")};
}

}  // namespace testing_support
