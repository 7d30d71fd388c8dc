#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "misinfo/embeddings.hpp"
#include "misinfo/error.hpp"
#include "misinfo/preprocess.hpp"

namespace misinfo {

// ---------------------------------------------------------------------------
// Keywords

/// Lowercase, tokenize, Porter-stem each token, rejoin with single spaces.
inline std::string stem_phrase(std::string_view phrase) {
  std::string out;
  for (const auto& t : tokenize(detail::ascii_lower(phrase))) {
    if (!out.empty()) out += ' ';
    out += stem(t.text);
  }
  return out;
}

/// Most frequent stemmed anchors, count descending then lexicographic.
inline std::vector<std::pair<std::string, std::size_t>> top_keywords(std::span<const std::string> anchors,
                                                                     std::size_t k) {
  std::map<std::string, std::size_t> counts;
  for (const auto& a : anchors) {
    std::string s = stem_phrase(a);
    if (!s.empty()) ++counts[s];
  }
  std::vector<std::pair<std::string, std::size_t>> out(counts.begin(), counts.end());
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (out.size() > k) out.resize(k);
  return out;
}

/// Among tweets with at least one anchor among `top_k`, the fraction that
/// also carry an anchor in `misinfo_keywords`. Keyword sets hold stems;
/// anchors are stemmed here. 0 when no tweet qualifies.
inline double keyword_spread(const std::vector<std::vector<std::string>>& tweet_anchors,
                             const std::set<std::string>& top_k, const std::set<std::string>& misinfo_keywords) {
  std::size_t denom = 0, num = 0;
  for (const auto& anchors : tweet_anchors) {
    bool in_top = false, in_misinfo = false;
    for (const auto& a : anchors) {
      const std::string s = stem_phrase(a);
      in_top = in_top || top_k.contains(s);
      in_misinfo = in_misinfo || misinfo_keywords.contains(s);
    }
    if (in_top) {
      ++denom;
      num += in_misinfo;
    }
  }
  return denom ? static_cast<double>(num) / static_cast<double>(denom) : 0.0;
}

// ---------------------------------------------------------------------------
// Lexicons

enum class LexiconKind { Categorical, Scalar };

struct Lexicon {
  std::string name;
  LexiconKind kind = LexiconKind::Categorical;
  // categorical: category -> terms, a trailing '*' marks a prefix
  std::map<std::string, std::vector<std::string>> categories;
  // scalar: dimension names and term -> values in that order
  std::vector<std::string> dimensions;
  std::unordered_map<std::string, std::vector<double>> values;

  std::vector<std::string> feature_names() const {
    std::vector<std::string> out;
    if (kind == LexiconKind::Categorical)
      for (const auto& [c, terms] : categories) out.push_back(name + "." + c);
    else
      for (const auto& d : dimensions) out.push_back(name + "." + d);
    return out;
  }
};

inline bool term_matches(std::string_view term, std::string_view token) {
  if (!term.empty() && term.back() == '*') return token.starts_with(term.substr(0, term.size() - 1));
  return term == token;
}

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, '\t')) out.push_back(field);
  return out;
}

inline std::string trim(std::string s) {
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && is_space(static_cast<unsigned char>(s[i]))) ++i;
  return s.substr(i);
}

}  // namespace detail

/// "category<TAB>term" lines, or "term<TAB>dim=value<TAB>..." lines for a
/// scalar lexicon; the kind is taken from the first data line. Blank lines
/// are skipped. The lexicon is named after the file stem.
inline Lexicon load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  Lexicon lex;
  lex.name = std::filesystem::path(path).stem().string();
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  auto fail = [&](const std::string& what) {
    throw Error(ErrorKind::MalformedRecord, path + ":" + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_tabs(line);
    for (auto& f : fields) f = detail::trim(f);
    if (fields.size() < 2) fail("expected at least two tab-separated fields");
    if (first) {
      lex.kind = fields[1].find('=') != std::string::npos ? LexiconKind::Scalar : LexiconKind::Categorical;
      first = false;
    }
    if (lex.kind == LexiconKind::Categorical) {
      if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) fail("expected category<TAB>term");
      lex.categories[fields[0]].push_back(detail::ascii_lower(fields[1]));
      continue;
    }
    std::vector<std::string> dims;
    std::vector<double> vals;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      const auto eq = fields[i].find('=');
      double v = 0;
      if (eq == std::string::npos || !detail::parse_double(std::string_view(fields[i]).substr(eq + 1), v))
        fail("expected dim=value, got \"" + fields[i] + "\"");
      dims.push_back(fields[i].substr(0, eq));
      vals.push_back(v);
    }
    if (lex.dimensions.empty()) lex.dimensions = dims;
    else if (dims != lex.dimensions) fail("dimensions differ from the first entry");
    if (!lex.values.emplace(detail::ascii_lower(fields[0]), std::move(vals)).second) fail("duplicate term " + fields[0]);
  }
  if (first) throw Error(ErrorKind::MalformedRecord, path + ": empty lexicon");
  return lex;
}

struct FeatureVector {
  std::vector<std::string> names;
  std::vector<double> values;
};

/// Categorical features: share of tokens matching the category. Scalar
/// features: per-dimension mean over tokens found in the lexicon (0 if none).
inline FeatureVector lexicon_features(std::span<const std::string> tokens, std::span<const Lexicon> lexicons) {
  FeatureVector fv;
  const double n = static_cast<double>(tokens.size());
  for (const auto& lex : lexicons) {
    if (lex.kind == LexiconKind::Categorical) {
      for (const auto& [cat, terms] : lex.categories) {
        std::size_t hits = 0;
        for (const auto& tok : tokens)
          hits += std::any_of(terms.begin(), terms.end(), [&](const std::string& t) { return term_matches(t, tok); });
        fv.names.push_back(lex.name + "." + cat);
        fv.values.push_back(tokens.empty() ? 0.0 : static_cast<double>(hits) / n);
      }
    } else {
      std::vector<double> sum(lex.dimensions.size(), 0.0);
      std::size_t matched = 0;
      for (const auto& tok : tokens) {
        auto it = lex.values.find(tok);
        if (it == lex.values.end()) continue;
        ++matched;
        for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += it->second[d];
      }
      for (std::size_t d = 0; d < sum.size(); ++d) {
        fv.names.push_back(lex.name + "." + lex.dimensions[d]);
        fv.values.push_back(matched ? sum[d] / static_cast<double>(matched) : 0.0);
      }
    }
  }
  return fv;
}

// ---------------------------------------------------------------------------
// Statistics

struct TTest {
  double t = 0;
  double df = 0;
  double p = 1;
};

namespace detail {

inline std::pair<double, double> mean_var(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  const double m = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0;
  for (double v : x) ss += (v - m) * (v - m);
  return {m, ss / (n - 1)};
}

}  // namespace detail

/// Two-sided p-value for a t statistic with `df` degrees of freedom.
inline double t_two_tailed_p(double t, double df) {
  if (std::isinf(t)) return 0.0;
  boost::math::students_t dist(df);
  return std::min(1.0, 2.0 * boost::math::cdf(dist, -std::abs(t)));
}

/// Welch's unequal-variance t-test with Welch-Satterthwaite df.
inline TTest welch_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2)
    throw Error(ErrorKind::DegenerateSamples, "each sample needs at least two values");
  const auto [ma, va] = detail::mean_var(a);
  const auto [mb, vb] = detail::mean_var(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double qa = va / na, qb = vb / nb;
  const double se2 = qa + qb;
  if (!(se2 > 0)) throw Error(ErrorKind::DegenerateSamples, "both samples have zero variance");
  TTest r;
  r.t = (ma - mb) / std::sqrt(se2);
  r.df = se2 * se2 / (qa * qa / (na - 1) + qb * qb / (nb - 1));
  r.p = t_two_tailed_p(r.t, r.df);
  return r;
}

struct Counts {
  std::size_t present = 0;
  std::size_t total = 0;
};

/// ln of the odds ratio with +0.5 added to every cell; positive when the
/// feature is over-represented in the first group.
inline double signed_log_odds(Counts first, Counts second) {
  for (const Counts& c : {first, second})
    if (c.total == 0 || c.present > c.total)
      throw Error(ErrorKind::InvalidCounts,
                  std::to_string(c.present) + " present out of " + std::to_string(c.total));
  const auto log_odds = [](Counts c) {
    return std::log(static_cast<double>(c.present) + 0.5) - std::log(static_cast<double>(c.total - c.present) + 0.5);
  };
  return log_odds(first) - log_odds(second);
}

struct GroupComparison {
  std::string feature;
  double mean_misinfo = 0;
  double mean_correct = 0;
  double t_statistic = 0;
  double degrees_of_freedom = 0;
  double p_value = 1;
  double signed_log_odds = 0;
  bool significant = false;
};

/// Per-feature Welch test on the raw values and signed log-odds on presence
/// (value > 0), misinfo group first. Features constant within both groups
/// get t = 0, p = 1 when the constants agree and t = +-inf, p = 0 otherwise.
/// Sorted by |signed_log_odds| descending, then feature name.
inline std::vector<GroupComparison> compare_groups(const std::vector<std::vector<std::string>>& misinfo,
                                                   const std::vector<std::vector<std::string>>& correct,
                                                   std::span<const Lexicon> lexicons) {
  if (misinfo.size() < 2 || correct.size() < 2)
    throw Error(ErrorKind::GroupTooSmall, "each group needs at least two tweets (got " + std::to_string(misinfo.size()) +
                                              " and " + std::to_string(correct.size()) + ")");
  auto extract = [&](const std::vector<std::vector<std::string>>& group, std::vector<std::string>& names) {
    std::vector<std::vector<double>> cols;
    for (const auto& tokens : group) {
      auto fv = lexicon_features(tokens, lexicons);
      if (cols.empty()) {
        names = fv.names;
        cols.resize(fv.values.size());
      }
      for (std::size_t f = 0; f < fv.values.size(); ++f) cols[f].push_back(fv.values[f]);
    }
    return cols;
  };
  std::vector<std::string> names;
  const auto a = extract(misinfo, names);
  const auto b = extract(correct, names);

  std::vector<GroupComparison> out;
  for (std::size_t f = 0; f < names.size(); ++f) {
    GroupComparison g;
    g.feature = names[f];
    const auto [ma, va] = detail::mean_var(a[f]);
    const auto [mb, vb] = detail::mean_var(b[f]);
    g.mean_misinfo = ma;
    g.mean_correct = mb;
    if (va > 0 || vb > 0) {
      const TTest t = welch_ttest(a[f], b[f]);
      g.t_statistic = t.t;
      g.degrees_of_freedom = t.df;
      g.p_value = t.p;
    } else {
      g.degrees_of_freedom = static_cast<double>(a[f].size() + b[f].size() - 2);
      if (ma == mb) {
        g.t_statistic = 0;
        g.p_value = 1;
      } else {
        g.t_statistic = ma > mb ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        g.p_value = 0;
      }
    }
    auto presence = [](const std::vector<double>& v) {
      return Counts{static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](double x) { return x > 0; })),
                    v.size()};
    };
    g.signed_log_odds = signed_log_odds(presence(a[f]), presence(b[f]));
    g.significant = g.p_value < 0.05;
    out.push_back(std::move(g));
  }
  std::stable_sort(out.begin(), out.end(), [](const GroupComparison& x, const GroupComparison& y) {
    const double ax = std::abs(x.signed_log_odds), ay = std::abs(y.signed_log_odds);
    if (ax != ay) return ax > ay;
    return x.feature < y.feature;
  });
  return out;
}

inline std::string comparisons_to_tsv(std::span<const GroupComparison> rows) {
  std::string out = "feature\tmean_misinfo\tmean_correct\tt_statistic\tdf\tp_value\tsigned_log_odds\tsignificant\n";
  for (const auto& r : rows) {
    out += r.feature;
    for (double v : {r.mean_misinfo, r.mean_correct, r.t_statistic, r.degrees_of_freedom, r.p_value, r.signed_log_odds})
      out += '\t' + detail::format_double(v);
    out += r.significant ? "\ttrue\n" : "\tfalse\n";
  }
  return out;
}

inline nlohmann::json comparisons_summary(std::span<const GroupComparison> rows, std::size_t misinfo_n,
                                          std::size_t correct_n) {
  nlohmann::json sig = nlohmann::json::array();
  for (const auto& r : rows)
    if (r.significant) sig.push_back({{"feature", r.feature}, {"signed_log_odds", r.signed_log_odds}, {"p_value", r.p_value}});
  return {{"misinfo_tweets", misinfo_n},
          {"correct_tweets", correct_n},
          {"features", rows.size()},
          {"significant_count", sig.size()},
          {"significant", std::move(sig)}};
}

}  // namespace misinfo
