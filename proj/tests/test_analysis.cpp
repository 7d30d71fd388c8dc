#include <gtest/gtest.h>

#include <cmath>

#include "misinfo/analysis.hpp"
#include "oracles.hpp"
#include "support.hpp"

using misinfo::Counts;
using misinfo::ErrorKind;
using misinfo::Lexicon;
using misinfo::LexiconKind;
using testing_support::TempDir;

namespace {

Lexicon categorical(const std::string& name, std::map<std::string, std::vector<std::string>> cats) {
  Lexicon l;
  l.name = name;
  l.kind = LexiconKind::Categorical;
  l.categories = std::move(cats);
  return l;
}

// Hand evaluation of the corrected log odds, written out cell by cell.
double corrected_log_odds(double a, double A, double b, double B) {
  return std::log(((a + 0.5) / (A - a + 0.5)) / ((b + 0.5) / (B - b + 0.5)));
}

}  // namespace

TEST(StemPhrase, LowercasesAndStemsEachToken) {
  EXPECT_EQ(misinfo::stem_phrase("Carrot Juice"), "carrot juic");
  EXPECT_EQ(misinfo::stem_phrase("cannabis"), "cannabi");
  EXPECT_EQ(misinfo::stem_phrase(""), "");
}

TEST(TopKeywords, CountsThenLexicographic) {
  const std::vector<std::string> a{"cannabis", "cannabis", "hemp"};
  EXPECT_EQ(misinfo::top_keywords(a, 2), (std::vector<std::pair<std::string, std::size_t>>{{"cannabi", 2}, {"hemp", 1}}));
  const std::vector<std::string> b{"carrot juice"};
  EXPECT_EQ(misinfo::top_keywords(b, 1), (std::vector<std::pair<std::string, std::size_t>>{{"carrot juic", 1}}));
  EXPECT_TRUE(misinfo::top_keywords(std::vector<std::string>{}, 3).empty());
  const std::vector<std::string> ties{"sugar", "meat", "bacon", "Meats"};
  EXPECT_EQ(misinfo::top_keywords(ties, 3),
            (std::vector<std::pair<std::string, std::size_t>>{{"meat", 2}, {"bacon", 1}, {"sugar", 1}}));
}

TEST(KeywordSpread, Counting) {
  std::vector<std::vector<std::string>> tweets;
  for (int i = 0; i < 100; ++i) tweets.push_back({i < 38 ? "cannabis" : "chemotherapy"});
  tweets.push_back({});
  const std::set<std::string> top{"cannabi", "chemotherapi"};
  EXPECT_NEAR(misinfo::keyword_spread(tweets, top, {"cannabi"}), 0.38, 1e-15);
  EXPECT_EQ(misinfo::keyword_spread(tweets, top, {}), 0.0);
  EXPECT_EQ(misinfo::keyword_spread(tweets, top, top), 1.0);
  EXPECT_EQ(misinfo::keyword_spread(tweets, {}, top), 0.0);
}

TEST(LexiconFeatures, CategoryShares) {
  const std::vector<Lexicon> lex{categorical("emo", {{"joy", {"happy"}}, {"sadness", {"sad"}}})};
  const std::vector<std::string> toks{"happy", "happy", "sad"};
  const auto fv = misinfo::lexicon_features(toks, lex);
  EXPECT_EQ(fv.names, (std::vector<std::string>{"emo.joy", "emo.sadness"}));
  EXPECT_NEAR(fv.values[0], 2.0 / 3, 1e-15);
  EXPECT_NEAR(fv.values[1], 1.0 / 3, 1e-15);
  const auto empty = misinfo::lexicon_features(std::vector<std::string>{}, lex);
  EXPECT_EQ(empty.values, (std::vector<double>{0.0, 0.0}));
}

TEST(LexiconFeatures, PrefixAndOrderInvariance) {
  EXPECT_TRUE(misinfo::term_matches("certain*", "certainly"));
  EXPECT_FALSE(misinfo::term_matches("certain", "certainly"));
  const std::vector<Lexicon> lex{categorical("l", {{"c", {"certain*", "sure"}}, {"d", {"doubt"}}})};
  std::vector<std::string> toks{"certainly", "doubt", "sure", "x"};
  const auto base = misinfo::lexicon_features(toks, lex).values;
  std::sort(toks.begin(), toks.end());
  do {
    EXPECT_EQ(misinfo::lexicon_features(toks, lex).values, base);
  } while (std::next_permutation(toks.begin(), toks.end()));
}

TEST(LoadLexicon, BothKindsAndErrors) {
  TempDir dir;
  testing_support::write_file(dir.file("emo.tsv"), "joy\thappy\njoy\tglad*\n\nsadness\tsad\n");
  const auto cat = misinfo::load_lexicon(dir.file("emo.tsv"));
  EXPECT_EQ(cat.name, "emo");
  EXPECT_EQ(cat.kind, LexiconKind::Categorical);
  EXPECT_EQ(cat.categories.at("joy"), (std::vector<std::string>{"happy", "glad*"}));

  testing_support::write_file(dir.file("vad.tsv"), "happy\tvalence=0.9\tarousal=0.5\nsad\tvalence=0.1\tarousal=0.2\n");
  const auto sc = misinfo::load_lexicon(dir.file("vad.tsv"));
  EXPECT_EQ(sc.kind, LexiconKind::Scalar);
  EXPECT_EQ(sc.feature_names(), (std::vector<std::string>{"vad.valence", "vad.arousal"}));
  const std::vector<Lexicon> lex{sc};
  const auto fv = misinfo::lexicon_features(std::vector<std::string>{"happy", "sad", "other"}, lex);
  EXPECT_NEAR(fv.values[0], 0.5, 1e-15);
  EXPECT_NEAR(fv.values[1], 0.35, 1e-15);

  testing_support::write_file(dir.file("bad.tsv"), "happy\tvalence=0.9\nsad\tvalence=x\n");
  try {
    misinfo::load_lexicon(dir.file("bad.tsv"));
    FAIL();
  } catch (const misinfo::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MalformedRecord);
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
  testing_support::write_file(dir.file("one.tsv"), "justone\n");
  EXPECT_THROW(misinfo::load_lexicon(dir.file("one.tsv")), misinfo::Error);
}

TEST(Welch, WorkedExample) {
  const std::vector<double> a{1, 2, 3}, b{4, 5, 6};
  const auto r = misinfo::welch_ttest(a, b);
  EXPECT_NEAR(r.t, -3.674, 1e-3);
  EXPECT_NEAR(r.df, 4.0, 1e-2);
  EXPECT_NEAR(r.p, 0.0213, 5e-4);
  const auto o = oracle::welch(a, b);
  EXPECT_NEAR(r.t, o.t, 1e-12);
  EXPECT_NEAR(r.df, o.df, 1e-12);
  EXPECT_NEAR(r.p, oracle::t_two_tailed_p(o.t, o.df), 1e-8);
}

TEST(Welch, SymmetryAndErrors) {
  const std::vector<double> a{1, 4, 2, 8}, b{3, 3.5, 9, 1, 0};
  const auto ab = misinfo::welch_ttest(a, b), ba = misinfo::welch_ttest(b, a);
  EXPECT_EQ(ab.t, -ba.t);
  EXPECT_EQ(ab.p, ba.p);
  const auto same = misinfo::welch_ttest(a, a);
  EXPECT_EQ(same.t, 0.0);
  EXPECT_EQ(same.p, 1.0);
  const std::vector<double> one{1}, flat{2, 2};
  EXPECT_THROW(misinfo::welch_ttest(one, b), misinfo::Error);
  try {
    misinfo::welch_ttest(flat, flat);
    FAIL();
  } catch (const misinfo::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateSamples);
  }
}

TEST(Welch, PValueMatchesQuadratureAcrossDf) {
  for (int df = 1; df <= 200; df += (df < 10 ? 1 : 7)) {
    for (double t : {0.1, 0.7, 1.5, 2.2, 3.9}) {
      EXPECT_NEAR(misinfo::t_two_tailed_p(t, df), oracle::t_two_tailed_p(t, df), 1e-6) << "df " << df << " t " << t;
    }
  }
  EXPECT_EQ(misinfo::t_two_tailed_p(INFINITY, 3), 0.0);
}

TEST(Welch, RandomSamplesMatchOracle) {
  misinfo::Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(2 + rng.below(10)), b(2 + rng.below(10));
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = 0.5 + 2 * rng.normal();
    const auto r = misinfo::welch_ttest(a, b);
    const auto o = oracle::welch(a, b);
    EXPECT_NEAR(r.t, o.t, 1e-10 * std::max(1.0, std::abs(o.t)));
    EXPECT_NEAR(r.df, o.df, 1e-9 * o.df);
    EXPECT_NEAR(r.p, oracle::t_two_tailed_p(o.t, o.df), 1e-6);
  }
}

TEST(SignedLogOdds, HandArithmetic) {
  // 30/100 vs 10/100: ln((30.5/70.5)/(10.5/90.5)).
  EXPECT_NEAR(misinfo::signed_log_odds({30, 100}, {10, 100}), corrected_log_odds(30, 100, 10, 100), 1e-12);
  EXPECT_NEAR(misinfo::signed_log_odds({30, 100}, {10, 100}), 1.3161, 1e-4);
  EXPECT_NEAR(misinfo::signed_log_odds({5, 10}, {0, 10}), std::log(21.0), 1e-12);
  EXPECT_NEAR(misinfo::signed_log_odds({5, 10}, {0, 10}), 3.045, 1e-3);
  EXPECT_EQ(misinfo::signed_log_odds({7, 20}, {7, 20}), 0.0);
}

TEST(SignedLogOdds, AntisymmetricExactly) {
  misinfo::Rng rng(32);
  for (int trial = 0; trial < 500; ++trial) {
    const Counts a{rng.below(50), 50 + rng.below(50)}, b{rng.below(30), 30 + rng.below(80)};
    EXPECT_EQ(misinfo::signed_log_odds(a, b), -misinfo::signed_log_odds(b, a));
  }
}

TEST(SignedLogOdds, InvalidCounts) {
  try {
    misinfo::signed_log_odds({5, 4}, {1, 2});
    FAIL();
  } catch (const misinfo::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidCounts);
  }
  EXPECT_THROW(misinfo::signed_log_odds({0, 0}, {1, 2}), misinfo::Error);
}

TEST(CompareGroups, OneSidedCategoryIsSignificant) {
  const std::vector<Lexicon> lex{categorical("l", {{"attractive", {"miracle", "amazing"}}, {"neutral", {"the"}}})};
  std::vector<std::vector<std::string>> mis, cor;
  for (int i = 0; i < 20; ++i) {
    mis.push_back(i % 4 ? std::vector<std::string>{"miracle", "cure", "the"} : std::vector<std::string>{"amazing", "x", "y", "the"});
    cor.push_back(i % 2 ? std::vector<std::string>{"study", "the"} : std::vector<std::string>{"trial", "shows", "the"});
  }
  const auto rows = misinfo::compare_groups(mis, cor, lex);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].feature, "l.attractive");
  EXPECT_TRUE(rows[0].significant);
  EXPECT_GT(rows[0].signed_log_odds, 0.0);
  EXPECT_NEAR(rows[0].signed_log_odds, std::log(20.5 / 0.5 / (0.5 / 20.5)), 1e-12);
  EXPECT_TRUE(std::isfinite(rows[0].t_statistic));

  const auto swapped = misinfo::compare_groups(cor, mis, lex);
  for (const auto& r : rows) {
    const auto it = std::find_if(swapped.begin(), swapped.end(), [&](const auto& s) { return s.feature == r.feature; });
    ASSERT_NE(it, swapped.end());
    EXPECT_EQ(it->signed_log_odds, -r.signed_log_odds);
  }
}

TEST(CompareGroups, IdenticalGroupsAndConstants) {
  const std::vector<Lexicon> lex{categorical("l", {{"a", {"x"}}, {"b", {"never"}}})};
  const std::vector<std::vector<std::string>> g{{"x", "y"}, {"y"}, {"x", "x"}};
  for (const auto& r : misinfo::compare_groups(g, g, lex)) EXPECT_FALSE(r.significant) << r.feature;
  const auto rows = misinfo::compare_groups(g, g, lex);
  const auto b = std::find_if(rows.begin(), rows.end(), [](const auto& r) { return r.feature == "l.b"; });
  EXPECT_EQ(b->t_statistic, 0.0);
  EXPECT_EQ(b->p_value, 1.0);
  try {
    misinfo::compare_groups({{"x"}}, g, lex);
    FAIL();
  } catch (const misinfo::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::GroupTooSmall);
  }
}

TEST(CompareGroups, TsvAndSummary) {
  const std::vector<Lexicon> lex{categorical("l", {{"a", {"x"}}})};
  const std::vector<std::vector<std::string>> m{{"x"}, {"x", "y"}}, c{{"y"}, {"z"}};
  const auto rows = misinfo::compare_groups(m, c, lex);
  const auto tsv = misinfo::comparisons_to_tsv(rows);
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "feature\tmean_misinfo\tmean_correct\tt_statistic\tdf\tp_value\tsigned_log_odds\tsignificant");
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 2);
  const auto s = misinfo::comparisons_summary(rows, 2, 2);
  EXPECT_EQ(s["features"], 1);
  EXPECT_EQ(s["significant_count"], s["significant"].size());
}
