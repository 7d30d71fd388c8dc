#pragma once

#include <algorithm>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "misinfo/corpus.hpp"
#include "misinfo/embeddings.hpp"
#include "misinfo/error.hpp"
#include "misinfo/preprocess.hpp"

namespace misinfo {

inline const std::vector<std::string>& default_cure_terms() {
  static const std::vector<std::string> terms{"chemotherapy", "radiation therapy", "immunotherapy", "targeted therapy",
                                              "hormone therapy"};
  return terms;
}

/// Proven-cure terms and their vectors (mean of the word vectors). A term
/// with any out-of-vocabulary word has no vector and cannot match.
class CureLexicon {
 public:
  CureLexicon(const EmbeddingTable& embeddings, std::vector<std::string> terms = default_cure_terms())
      : terms_(std::move(terms)), dim_(embeddings.dim()) {
    for (const auto& term : terms_) {
      std::istringstream words(term);
      std::string w;
      Vector sum = Vector::Zero(static_cast<Eigen::Index>(dim_));
      std::size_t n = 0;
      bool complete = true;
      while (words >> w) {
        auto v = embeddings.resolve(w);
        if (!v) {
          complete = false;
          break;
        }
        sum += embeddings.vectors().row(static_cast<Eigen::Index>(*v)).transpose();
        ++n;
      }
      if (complete && n > 0) vectors_.emplace_back(sum / static_cast<double>(n));
      else vectors_.emplace_back(std::nullopt);
    }
  }

  const std::vector<std::string>& terms() const { return terms_; }
  const std::optional<Vector>& vector(std::size_t i) const { return vectors_[i]; }
  std::size_t dim() const { return dim_; }

 private:
  std::vector<std::string> terms_;
  std::vector<std::optional<Vector>> vectors_;
  std::size_t dim_;
};

/// One term per line; blank lines are skipped.
inline std::vector<std::string> load_cure_terms(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  std::vector<std::string> terms;
  std::string line;
  while (std::getline(in, line)) {
    std::string t = detail::collapse_whitespace(line);
    if (!t.empty()) terms.push_back(detail::ascii_lower(t));
  }
  return terms;
}

struct CureConfig {
  double tau = 0.60;
};

struct CureScore {
  double s1 = 0;   // max cosine to a proven-cure vector
  double s2 = 0;   // threshold
  int term = -1;   // index of the best term, -1 when none scored
};

inline CureScore cure_score(const Vector& v, const CureLexicon& lexicon, const CureConfig& cfg = {}) {
  if (static_cast<std::size_t>(v.size()) != lexicon.dim())
    throw Error(ErrorKind::DimensionMismatch,
                "vector has dim " + std::to_string(v.size()) + ", lexicon has " + std::to_string(lexicon.dim()));
  CureScore out{0.0, cfg.tau, -1};
  bool any = false;
  for (std::size_t i = 0; i < lexicon.terms().size(); ++i) {
    const auto& c = lexicon.vector(i);
    if (!c) continue;
    const double s = cosine(v, *c);
    if (!any || s > out.s1) {
      out.s1 = s;
      out.term = static_cast<int>(i);
      any = true;
    }
  }
  return out;
}

struct CureHit {
  std::size_t start = 0;   // token index
  std::size_t length = 1;  // 1 = unigram, 2 = bigram
  double s1 = 0;
  std::string term;        // best-matching proven cure
};

/// Scores every in-vocabulary unigram and every bigram whose two words are
/// both in vocabulary (mean vector). Hits have s1 > tau, ordered by
/// descending s1, then position, then unigram first.
inline std::vector<CureHit> detect_cure_anchor(std::span<const std::string> tokens, const EmbeddingTable& embeddings,
                                               const CureLexicon& lexicon, const CureConfig& cfg = {}) {
  std::vector<std::optional<std::size_t>> rows;
  rows.reserve(tokens.size());
  for (const auto& t : tokens) rows.push_back(embeddings.resolve(t));
  auto row = [&](std::size_t i) -> Vector {
    return embeddings.vectors().row(static_cast<Eigen::Index>(*rows[i])).transpose();
  };
  std::vector<CureHit> hits;
  auto consider = [&](std::size_t start, std::size_t length, const Vector& v) {
    const CureScore s = cure_score(v, lexicon, cfg);
    if (s.term >= 0 && s.s1 > cfg.tau)
      hits.push_back({start, length, s.s1, lexicon.terms()[static_cast<std::size_t>(s.term)]});
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!rows[i]) continue;
    consider(i, 1, row(i));
    if (i + 1 < tokens.size() && rows[i + 1]) consider(i, 2, (row(i) + row(i + 1)) / 2.0);
  }
  std::stable_sort(hits.begin(), hits.end(), [](const CureHit& a, const CureHit& b) {
    if (a.s1 != b.s1) return a.s1 > b.s1;
    if (a.start != b.start) return a.start < b.start;
    return a.length < b.length;
  });
  return hits;
}

inline std::vector<CureHit> detect_cure_anchor(std::span<const Token> tokens, const EmbeddingTable& embeddings,
                                               const CureLexicon& lexicon, const CureConfig& cfg = {}) {
  std::vector<std::string> words;
  words.reserve(tokens.size());
  for (const auto& t : tokens) words.push_back(t.text);
  return detect_cure_anchor(std::span<const std::string>(words), embeddings, lexicon, cfg);
}

enum class CureVerdict { ProvenCurePresent, MisinfoCandidate };

inline std::string_view to_string(CureVerdict v) {
  return v == CureVerdict::ProvenCurePresent ? "proven_cure_present" : "misinfo_candidate";
}

inline CureVerdict classify_cure_misinfo(std::span<const std::string> tokens, const EmbeddingTable& embeddings,
                                         const CureLexicon& lexicon, const CureConfig& cfg = {}) {
  return detect_cure_anchor(tokens, embeddings, lexicon, cfg).empty() ? CureVerdict::MisinfoCandidate
                                                                      : CureVerdict::ProvenCurePresent;
}

inline CureVerdict classify_cure_misinfo(const Tweet& tweet, const EmbeddingTable& embeddings,
                                         const CureLexicon& lexicon, const CureConfig& cfg = {}) {
  if (!tweet.tokens) throw Error(ErrorKind::EmptySequence, "tweet " + tweet.id + " is not tokenized");
  return detect_cure_anchor(std::span<const Token>(*tweet.tokens), embeddings, lexicon, cfg).empty()
             ? CureVerdict::MisinfoCandidate
             : CureVerdict::ProvenCurePresent;
}

}  // namespace misinfo
