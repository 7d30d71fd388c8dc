// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

#include "gradcheck.hpp"
#include "misinfo/analysis.hpp"
#include "misinfo/crf.hpp"
#include "misinfo/cure_detect.hpp"
#include "misinfo/relevance.hpp"
#include "misinfo/tagger.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace {

using misinfo::BioTag;
using misinfo::TaggerVariant;
using testing_support::read_file;
using testing_support::run_cli;
using testing_support::TempDir;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

void crf_oracle(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  misinfo::Rng rng(2024);
  double worst = 0;
  int decode_mismatch = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int T = 1 + static_cast<int>(rng.below(6));
    auto crf = misinfo::CrfLayer::zeros();
    crf.visit("", [&](const std::string&, misinfo::nn::Parameter& p) {
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value(i) = rng.normal();
    });
    misinfo::nn::Matrix e(T, 3);
    for (Eigen::Index i = 0; i < e.size(); ++i) e(i) = 2 * rng.normal();
    const auto& tr = crf.transitions.value;
    const Eigen::VectorXd st = crf.start.value.col(0), en = crf.end.value.col(0);
    worst = std::max(worst, std::abs(misinfo::crf_log_partition(e, crf) - oracle::brute_log_partition(e, tr, st, en)));
    std::vector<int> got;
    for (BioTag t : misinfo::viterbi_decode(e, crf)) got.push_back(static_cast<int>(t));
    decode_mismatch += got != oracle::brute_viterbi(e, tr, st, en);
  }
  const double secs = seconds_since(t0);
  o.detail << "100 instances, max |logZ - brute| = " << sci(worst) << ", viterbi mismatches = " << decode_mismatch
           << ", " << fmt(secs, 2) << " s";
  o.require(worst <= 1e-8, "log partition within 1e-8");
  o.require(decode_mismatch == 0, "viterbi exact");
  o.require(secs < 5, "runtime < 5 s");
}

void gradient_audit(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  // Relevance FFN at full width on five 3-token tweets.
  const auto f = testing_support::separable_fixture(10, 4, 8);
  const auto split = misinfo::split_dataset(testing_support::parse_records(f.records), 8);
  misinfo::RelevanceConfig cfg;
  cfg.epochs = 0;
  auto model = misinfo::train_relevance(split, misinfo::RelevanceMode::Weighted, f.table, cfg);
  misinfo::nn::Matrix X(4, 5), y(1, 5);
  for (Eigen::Index i = 0; i < 5; ++i) {
    const auto& a = split.train[static_cast<std::size_t>(i)];
    X.col(i) = model.features(misinfo::relevance_tokens(a.tweet));
    y(0, i) = a.relevant;
  }
  const auto ffn = gradcheck::ffn_audit(model.net, X, y);
  o.detail << "relevance-ffn " << sci(ffn.max_rel_error) << " (" << ffn.checked << " params)";
  o.require(ffn.max_rel_error < 1e-4, "relevance ffn: " + ffn.worst);
  for (auto v : {TaggerVariant::CrfOnly, TaggerVariant::BilstmSoftmax, TaggerVariant::BilstmCrf,
                 TaggerVariant::AttnBilstmCrf, TaggerVariant::SelfAttnBilstmCrf}) {
    const auto a = gradcheck::tagger_audit(v, 17);
    o.detail << ", " << misinfo::to_string(v) << " " << sci(a.max_rel_error);
    o.require(a.max_rel_error < 1e-4, std::string(misinfo::to_string(v)) + ": " + a.worst);
  }
  const double secs = seconds_since(t0);
  o.detail << ", " << fmt(secs, 1) << " s";
  o.require(secs < 60, "runtime < 60 s");
}

void overfit(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  misinfo::Split tsplit;
  tsplit.train = testing_support::parse_records(testing_support::planted_records(50, 5, "tr"));
  tsplit.val = testing_support::parse_records(testing_support::planted_records(10, 1005, "va"));
  const auto table = testing_support::random_table(testing_support::planted_vocabulary(), 16, 6);
  misinfo::TaggerConfig tcfg;
  tcfg.lstm_hidden = 16;
  tcfg.epochs = 50;
  tcfg.batch_size = 5;
  tcfg.learning_rate = 1e-2;
  tcfg.patience = 50;
  std::size_t reached = 0;
  tcfg.on_epoch = [&](std::size_t epoch, double, double f1) {
    if (!reached && f1 >= 0.95) reached = epoch;
  };
  auto tagger = misinfo::train_tagger(tsplit, TaggerVariant::AttnBilstmCrf, table, tcfg);
  const double span_f1 = misinfo::evaluate_tagger(tagger, tsplit.val).span.f1;

  const auto fx = testing_support::separable_fixture(200, 8, 3);
  const auto rsplit = misinfo::split_dataset(testing_support::parse_records(fx.records), 3);
  misinfo::RelevanceConfig rcfg;
  rcfg.epochs = 30;
  auto rel = misinfo::train_relevance(rsplit, misinfo::RelevanceMode::Weighted, fx.table, rcfg);
  const double acc = misinfo::evaluate_relevance(rel, rsplit.train).accuracy;
  const double secs = seconds_since(t0);
  o.detail << "attn-bilstm-crf val span F1 = " << fmt(span_f1) << " (first >= 0.95 at epoch " << reached
           << "), relevance train accuracy = " << fmt(acc) << ", " << fmt(secs, 1) << " s";
  o.require(span_f1 >= 0.95, "span F1 >= 0.95");
  o.require(acc >= 0.95, "relevance accuracy >= 0.95");
  o.require(secs < 180, "runtime < 3 min");
}

void tfidf(Outcome& o) {
  const auto m = misinfo::fit_tfidf({{"cancer", "cure"}, {"cancer", "cause"}, {"meat", "meat"}});
  const double c = *m.idf_of("cancer");
  double worst = std::abs(c - 1.2877);
  for (const char* w : {"cure", "cause", "meat"}) worst = std::max(worst, std::abs(*m.idf_of(w) - 1.6931));
  const auto v = misinfo::tfidf_vector(m, std::vector<std::string>{"cancer", "cure"});
  const double norm = std::hypot(1.2877, 1.6931);
  worst = std::max(worst, std::abs(v[0].second - 1.2877 / norm));
  worst = std::max(worst, std::abs(v[1].second - 1.6931 / norm));
  o.detail << "idf(cancer) = " << fmt(c) << ", idf(cure|cause|meat) = " << fmt(*m.idf_of("cure"))
           << ", max deviation " << sci(worst);
  o.require(worst <= 1e-4, "match to 1e-4");
}

void statistics(Outcome& o) {
  const std::vector<double> a{1, 2, 3}, b{4, 5, 6};
  const auto r = misinfo::welch_ttest(a, b);
  o.detail << "welch t = " << fmt(r.t) << ", df = " << fmt(r.df, 3) << ", p = " << fmt(r.p);
  o.require(std::abs(r.t + 3.674) <= 1e-3, "t");
  o.require(std::abs(r.df - 4.0) <= 1e-2, "df");
  o.require(std::abs(r.p - 0.0213) <= 5e-4, "p");

  const double lo1 = misinfo::signed_log_odds({30, 100}, {10, 100});
  const double lo2 = misinfo::signed_log_odds({5, 10}, {0, 10});
  o.detail << "; log-odds 30/100 vs 10/100 = " << fmt(lo1) << " (target 1.341), 5/10 vs 0/10 = " << fmt(lo2)
           << " (target 3.045)";
  o.require(std::abs(lo1 - 1.341) <= 1e-3, "log-odds 1.341 case");
  o.require(std::abs(lo2 - 3.045) <= 1e-3, "log-odds 3.045 case");

  misinfo::Rng rng(5);
  bool anti = true;
  for (int i = 0; i < 1000; ++i) {
    const misinfo::Counts x{rng.below(40), 40 + rng.below(40)}, y{rng.below(40), 40 + rng.below(40)};
    anti = anti && misinfo::signed_log_odds(x, y) == -misinfo::signed_log_odds(y, x);
    std::vector<double> s1(3 + rng.below(5)), s2(3 + rng.below(5));
    for (auto& v : s1) v = rng.normal();
    for (auto& v : s2) v = rng.normal();
    const auto f = misinfo::welch_ttest(s1, s2), g = misinfo::welch_ttest(s2, s1);
    anti = anti && f.t == -g.t && f.p == g.p;
  }
  o.detail << "; antisymmetry " << (anti ? "exact" : "broken");
  o.require(anti, "antisymmetry");
}

void bio_fidelity(Outcome& o) {
  const std::string text = "Processed meats causes cancer according to #WHO";
  const auto toks = misinfo::tokenize(text);
  const std::vector<misinfo::Span> spans{{0, 15}};
  const auto bio = misinfo::spans_to_bio(toks, spans);
  std::string tags;
  for (BioTag t : bio) tags += misinfo::to_char(t);
  const auto anchors = misinfo::extract_anchors(toks, bio);
  o.detail << "tags " << tags << ", anchors [";
  for (const auto& a : anchors) o.detail << "\"" << a << "\"";
  o.detail << "]";
  o.require(tags == "BIOOOOO", "tags");
  o.require(anchors == std::vector<std::string>{"Processed meats"}, "anchors");
}

void cure_detector(Outcome& o) {
  const auto table = testing_support::cure_fixture_table();
  const misinfo::CureLexicon lex(*table);
  auto words = [](const std::string& s) {
    std::vector<std::string> w;
    for (const auto& t : misinfo::tokenize(s)) w.push_back(t.text);
    return w;
  };
  std::size_t missed = 0, false_hits = 0, monotone_breaks = 0;
  for (double tau = 0.01; tau < 1.0; tau += 0.01) {
    misinfo::CureConfig cfg;
    cfg.tau = tau;
    for (const auto& term : misinfo::default_cure_terms()) {
      const auto w = words("my aunt beat cancer with " + term);
      missed += misinfo::detect_cure_anchor(std::span<const std::string>(w), *table, lex, cfg).empty();
    }
    for (const std::string fake : {"carrot juice cures cancer", "hemp oil cures cancer"}) {
      const auto w = words(fake);
      false_hits += misinfo::detect_cure_anchor(std::span<const std::string>(w), *table, lex, cfg).size();
    }
  }
  const auto rand_table = testing_support::random_table(
      {"chemotherapy", "radiation", "therapy", "immunotherapy", "targeted", "hormone", "a", "b", "c", "d"}, 5, 9);
  const misinfo::CureLexicon rlex(*rand_table);
  misinfo::Rng rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> w;
    for (int i = 0; i < 6; ++i) w.push_back(rand_table->vocab()[rng.below(rand_table->size())]);
    std::size_t prev = SIZE_MAX;
    for (double tau = 0.0; tau < 1.0; tau += 0.02) {
      misinfo::CureConfig cfg;
      cfg.tau = tau;
      const auto n = misinfo::detect_cure_anchor(std::span<const std::string>(w), *rand_table, rlex, cfg).size();
      monotone_breaks += n > prev;
      prev = n;
    }
  }
  o.detail << "proven terms missed " << missed << ", fake-cure hits " << false_hits << ", monotonicity breaks "
           << monotone_breaks << " (tau swept over (0, 1))";
  o.require(missed == 0, "proven cures always detected");
  o.require(false_hits == 0, "orthogonal fake cures never detected");
  o.require(monotone_breaks == 0, "monotone in tau");
}

std::vector<std::vector<std::string>> pipeline(const testing_support::CliCorpus& c, const TempDir& dir) {
  const auto f = [&](const std::string& n) { return dir.file(n); };
  return {
      {"preprocess", "--in", c.tweets, "--out", f("prep.jsonl")},
      {"train-embeddings", "--in", c.tweets, "--dim", "8", "--epochs", "2", "--min-count", "1", "--out", f("sg.txt")},
      {"split", "--in", c.tweets, "--out", f("split.json")},
      {"train-relevance", "--in", c.tweets, "--split", f("split.json"), "--mode", "tfidf", "--hidden", "16,8",
       "--epochs", "3", "--out", f("rel_tfidf.json")},
      {"train-relevance", "--in", c.tweets, "--split", f("split.json"), "--mode", "weighted", "--embeddings",
       c.embeddings, "--hidden", "16,8", "--epochs", "3", "--out", f("rel_weighted.json")},
      {"train-relevance", "--in", c.tweets, "--split", f("split.json"), "--mode", "weighted", "--embeddings",
       c.embeddings, "--domain", "cure", "--hidden", "16,8", "--epochs", "3", "--out", f("rel_cure.json")},
      {"eval-relevance", "--in", c.tweets, "--split", f("split.json"), "--model", f("rel_tfidf.json"), "--model",
       f("rel_weighted.json"), "--model", f("rel_cure.json"), "--out", f("rel_report.json")},
      {"train-tagger", "--in", c.tweets, "--split", f("split.json"), "--variant", "bilstm-crf", "--embeddings",
       c.embeddings, "--lstm-hidden", "4", "--epochs", "2", "--out", f("tag_bc.json")},
      {"train-tagger", "--in", c.tweets, "--split", f("split.json"), "--variant", "attn-bilstm-crf", "--embeddings",
       c.embeddings, "--lstm-hidden", "4", "--epochs", "2", "--out", f("tag_abc.json")},
      {"train-tagger", "--in", c.tweets, "--split", f("split.json"), "--variant", "crf", "--embeddings", c.embeddings,
       "--domain", "cause", "--epochs", "2", "--out", f("tag_crf.json")},
      {"eval-tagger", "--in", c.tweets, "--split", f("split.json"), "--model", f("tag_bc.json"), "--model",
       f("tag_abc.json"), "--model", f("tag_crf.json"), "--out", f("tag_report.json")},
      {"tag", "--in", c.tweets, "--model", f("tag_abc.json"), "--out", f("tagged.jsonl")},
      {"detect-cure", "--in", c.tweets, "--embeddings", c.embeddings, "--out", f("cure.jsonl")},
      {"keywords", "--in", c.tweets, "--k", "5", "--out", f("kw.json")},
  };
}

const std::vector<std::string>& pipeline_outputs() {
  static const std::vector<std::string> o{
      "prep.jsonl",   "prep.jsonl.meta.json", "sg.txt",         "split.json",      "rel_tfidf.json",
      "rel_weighted.json", "rel_cure.json",   "rel_report.json", "tag_bc.json",    "tag_abc.json",
      "tag_crf.json", "tag_report.json",      "tagged.jsonl",   "cure.jsonl",      "kw.json"};
  return o;
}

void determinism(Outcome& o, const TempDir& dir, const testing_support::CliCorpus& corpus) {
  std::vector<std::string> first;
  std::size_t failed_runs = 0, differing = 0;
  for (int round = 0; round < 2; ++round) {
    for (const auto& step : pipeline(corpus, dir)) {
      const auto r = run_cli(step);
      if (r.code != 0) {
        ++failed_runs;
        o.detail << " [" << step[0] << " exited " << r.code << ": " << r.err.substr(0, 120) << "]";
      }
    }
    for (std::size_t i = 0; i < pipeline_outputs().size(); ++i) {
      const std::string bytes = read_file(dir.file(pipeline_outputs()[i]));
      if (round == 0) first.push_back(bytes);
      else if (bytes != first[i] || bytes.empty()) {
        ++differing;
        o.detail << " [" << pipeline_outputs()[i] << " differs]";
      }
    }
  }
  o.detail << pipeline(corpus, dir).size() << " subcommand runs repeated, " << pipeline_outputs().size()
           << " outputs compared, " << differing << " differ";
  o.require(failed_runs == 0, "all runs succeed");
  o.require(differing == 0, "byte-identical outputs");
}

// Structural schema check: required keys with the expected JSON types.
bool has_fields(const nlohmann::json& j, const std::vector<std::pair<std::string, nlohmann::json::value_t>>& fields,
                std::string& why) {
  for (const auto& [k, t] : fields) {
    if (!j.contains(k)) {
      why = "missing " + k;
      return false;
    }
    const auto actual = j[k].type();
    const bool numeric = t == nlohmann::json::value_t::number_float &&
                         (actual == nlohmann::json::value_t::number_integer ||
                          actual == nlohmann::json::value_t::number_unsigned);
    if (actual != t && !numeric) {
      why = k + " has type " + std::string(j[k].type_name());
      return false;
    }
  }
  return true;
}

void report_conformance(Outcome& o, const TempDir& dir) {
  using vt = nlohmann::json::value_t;
  std::string why;
  const auto rel = nlohmann::json::parse(read_file(dir.file("rel_report.json")), nullptr, false);
  const auto tag = nlohmann::json::parse(read_file(dir.file("tag_report.json")), nullptr, false);
  const std::vector<std::pair<std::string, vt>> header{
      {"command", vt::string}, {"seed", vt::number_unsigned}, {"config_digest", vt::string},
      {"report", vt::string},  {"entries", vt::array},        {"table", vt::string}};

  bool rel_ok = !rel.is_discarded() && has_fields(rel, header, why) && rel["report"] == "medical_relevance";
  std::set<std::string> modes;
  if (rel_ok)
    for (const auto& e : rel["entries"]) {
      rel_ok = rel_ok && has_fields(e, {{"domain", vt::string}, {"mode", vt::string}, {"f1", vt::number_float},
                                        {"accuracy", vt::number_float}},
                                    why);
      if (rel_ok) {
        modes.insert(e["mode"].get<std::string>());
        rel_ok = e["f1"] >= 0 && e["f1"] <= 1 && e["accuracy"] >= 0 && e["accuracy"] <= 1;
      }
    }
  rel_ok = rel_ok && modes == std::set<std::string>{"tfidf", "weighted"};
  if (!rel_ok) o.detail << " [relevance report: " << why << "]";

  bool tag_ok = !tag.is_discarded() && has_fields(tag, header, why) && tag["report"] == "anchor_detection";
  std::set<std::string> variants;
  if (tag_ok)
    for (const auto& e : tag["entries"]) {
      tag_ok = tag_ok && has_fields(e, {{"method", vt::string}, {"variant", vt::string}, {"domain", vt::string},
                                        {"f1", vt::number_float}},
                                    why);
      if (tag_ok) {
        variants.insert(e["variant"].get<std::string>());
        tag_ok = e["f1"] >= 0 && e["f1"] <= 1 && misinfo::parse_variant(e["variant"].get<std::string>()).has_value();
      }
    }
  tag_ok = tag_ok && variants.size() == 3;
  if (!tag_ok) o.detail << " [tagger report: " << why << "]";

  o.detail << "relevance report: " << (rel_ok ? rel["entries"].size() : 0) << " entries (F1 + accuracy per mode), "
           << "tagger report: " << (tag_ok ? tag["entries"].size() : 0) << " entries (F1 per variant)";
  o.require(rel_ok, "relevance report schema");
  o.require(tag_ok, "tagger report schema");
}

void skipgram(Outcome& o) {
  misinfo::SkipgramConfig cfg;
  cfg.dim = 16;
  cfg.epochs = 5;
  cfg.seed = 42;
  const auto r = misinfo::train_skipgram_detailed(std::vector<std::vector<std::string>>(200, {"heat", "fire"}), cfg);
  bool non_increasing = r.epoch_loss.size() >= 3;
  for (std::size_t e = 1; e < 3 && non_increasing; ++e) non_increasing = r.epoch_loss[e] <= r.epoch_loss[e - 1];
  const misinfo::Vector heat = *r.input.lookup("heat");
  const misinfo::Vector fire = r.context.row(static_cast<Eigen::Index>(*r.input.index_of("fire"))).transpose();
  misinfo::Rng rng(42);
  misinfo::Vector control(16);
  for (int k = 0; k < 16; ++k) control(k) = (rng.uniform() - 0.5) / 16.0;
  const double pair = misinfo::cosine(heat, fire), ctrl = misinfo::cosine(heat, control);
  o.detail << "epoch losses " << fmt(r.epoch_loss[0]) << ", " << fmt(r.epoch_loss[1]) << ", " << fmt(r.epoch_loss[2])
           << "; pair similarity " << fmt(pair) << " vs control " << fmt(ctrl);
  o.require(non_increasing, "loss non-increasing over first 3 epochs");
  o.require(pair > ctrl, "pair similarity exceeds control");
}

}  // namespace

int main() {
  TempDir dir;
  const auto corpus = testing_support::write_cli_corpus(dir, 30);
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"CRF oracle equivalence", crf_oracle},
      {"Gradient audit", gradient_audit},
      {"Overfit integration", overfit},
      {"tfidf oracle", tfidf},
      {"Statistics oracles", statistics},
      {"BIO fidelity", bio_fidelity},
      {"Cure detector", cure_detector},
      {"Determinism", [&](Outcome& o) { determinism(o, dir, corpus); }},
      {"Report conformance", [&](Outcome& o) { report_conformance(o, dir); }},
      {"Skip-gram sanity", skipgram},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << i + 1 << ". " << criteria[i].first << ": " << o.detail.str()
              << std::endl;
  }
  std::cout << criteria.size() - static_cast<std::size_t>(failures) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failures == 0 ? 0 : 1;
}
