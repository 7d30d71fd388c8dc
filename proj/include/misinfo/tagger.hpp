#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "misinfo/corpus.hpp"
#include "misinfo/crf.hpp"
#include "misinfo/embeddings.hpp"
#include "misinfo/error.hpp"
#include "misinfo/metrics.hpp"
#include "misinfo/model_io.hpp"
#include "misinfo/neural.hpp"

namespace misinfo {

enum class TaggerVariant { CrfOnly, BilstmSoftmax, BilstmCrf, AttnBilstmCrf, SelfAttnBilstmCrf };

inline std::string_view to_string(TaggerVariant v) {
  switch (v) {
    case TaggerVariant::CrfOnly: return "crf";
    case TaggerVariant::BilstmSoftmax: return "bilstm-softmax";
    case TaggerVariant::BilstmCrf: return "bilstm-crf";
    case TaggerVariant::AttnBilstmCrf: return "attn-bilstm-crf";
    case TaggerVariant::SelfAttnBilstmCrf: return "self-attn-bilstm-crf";
  }
  return "crf";
}

inline std::optional<TaggerVariant> parse_variant(std::string_view s) {
  for (auto v : {TaggerVariant::CrfOnly, TaggerVariant::BilstmSoftmax, TaggerVariant::BilstmCrf,
                 TaggerVariant::AttnBilstmCrf, TaggerVariant::SelfAttnBilstmCrf})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

inline bool uses_lstm(TaggerVariant v) { return v != TaggerVariant::CrfOnly; }
inline bool uses_crf(TaggerVariant v) { return v != TaggerVariant::BilstmSoftmax; }
inline bool uses_attention(TaggerVariant v) {
  return v == TaggerVariant::AttnBilstmCrf || v == TaggerVariant::SelfAttnBilstmCrf;
}

/// Anchor tagger. Per token input = word embedding (zero when OOV) followed
/// by one-hot blocks for any precomputed categorical token features. The
/// variant decides the encoder:
///   crf                   input -> projection -> CRF
///   bilstm-softmax        input -> BiLSTM -> projection -> per-token softmax
///   bilstm-crf            input -> BiLSTM -> projection -> CRF
///   attn-bilstm-crf       input -> attention gate -> BiLSTM -> projection -> CRF
///   self-attn-bilstm-crf  input -> self attention -> BiLSTM -> projection -> CRF
struct TaggerModel {
  TaggerVariant variant = TaggerVariant::AttnBilstmCrf;
  std::shared_ptr<const EmbeddingTable> embeddings;
  // Sorted value inventory for each categorical feature slot.
  std::vector<std::vector<std::string>> feature_values;
  std::optional<nn::AttentionNet> attention;
  std::optional<nn::LstmParams> fwd;
  std::optional<nn::LstmParams> bwd;
  nn::Dense projection;
  std::optional<CrfLayer> crf;

  nn::Index feature_dim() const {
    nn::Index n = 0;
    for (const auto& slot : feature_values) n += static_cast<nn::Index>(slot.size());
    return n;
  }

  nn::Index input_dim() const { return static_cast<nn::Index>(embeddings->dim()) + feature_dim(); }

  nn::Index lstm_hidden() const { return fwd ? fwd->hidden_dim() : 0; }

  /// Random initialisation (Glorot weights, zero CRF, forget bias 1).
  static TaggerModel init(TaggerVariant variant, std::shared_ptr<const EmbeddingTable> embeddings,
                          std::vector<std::vector<std::string>> feature_values, nn::Index lstm_hidden, Rng& rng) {
    TaggerModel m;
    m.variant = variant;
    m.embeddings = std::move(embeddings);
    m.feature_values = std::move(feature_values);
    const nn::Index in = m.input_dim();
    if (uses_attention(variant)) m.attention = nn::AttentionNet::init(in, rng);
    nn::Index enc = in;
    if (uses_lstm(variant)) {
      m.fwd = nn::LstmParams::init(in, lstm_hidden, rng);
      m.bwd = nn::LstmParams::init(in, lstm_hidden, rng);
      enc = 2 * lstm_hidden;
    }
    m.projection = nn::Dense::init(enc, static_cast<nn::Index>(kNumTags), rng);
    if (uses_crf(variant)) m.crf = CrfLayer::zeros();
    return m;
  }

  /// All-zero parameters with the right shapes (used before loading).
  static TaggerModel zeros(TaggerVariant variant, std::shared_ptr<const EmbeddingTable> embeddings,
                           std::vector<std::vector<std::string>> feature_values, nn::Index lstm_hidden) {
    TaggerModel m;
    m.variant = variant;
    m.embeddings = std::move(embeddings);
    m.feature_values = std::move(feature_values);
    const nn::Index in = m.input_dim();
    if (uses_attention(variant)) m.attention = nn::AttentionNet::zeros(in);
    nn::Index enc = in;
    if (uses_lstm(variant)) {
      m.fwd = nn::LstmParams::zeros(in, lstm_hidden);
      m.bwd = nn::LstmParams::zeros(in, lstm_hidden);
      enc = 2 * lstm_hidden;
    }
    m.projection = nn::Dense::zeros(enc, static_cast<nn::Index>(kNumTags));
    if (uses_crf(variant)) m.crf = CrfLayer::zeros();
    return m;
  }

  /// D x T input matrix for a token sequence.
  nn::Matrix encode_input(std::span<const Token> tokens,
                          std::span<const std::vector<std::string>> token_features = {}) const {
    const nn::Index E = static_cast<nn::Index>(embeddings->dim());
    nn::Matrix X = nn::Matrix::Zero(input_dim(), static_cast<nn::Index>(tokens.size()));
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const auto col = static_cast<nn::Index>(t);
      X.col(col).head(E) = embeddings->embed(tokens[t].text);
      if (t >= token_features.size()) continue;
      nn::Index offset = E;
      for (std::size_t s = 0; s < feature_values.size(); ++s) {
        const auto& values = feature_values[s];
        if (s < token_features[t].size()) {
          auto it = std::lower_bound(values.begin(), values.end(), token_features[t][s]);
          if (it != values.end() && *it == token_features[t][s]) X(offset + (it - values.begin()), col) = 1.0;
        }
        offset += static_cast<nn::Index>(values.size());
      }
    }
    return X;
  }

  /// K x T emission scores on the tape.
  nn::Var emissions(nn::Tape& tape, const nn::Matrix& input) {
    if (input.cols() == 0) throw Error(ErrorKind::EmptySequence, "cannot tag an empty token sequence");
    nn::Var h = tape.constant(input);
    if (variant == TaggerVariant::AttnBilstmCrf) h = nn::attention_apply(tape, *attention, h).weighted;
    if (variant == TaggerVariant::SelfAttnBilstmCrf) h = nn::self_attention_apply(tape, *attention, h);
    if (uses_lstm(variant)) h = nn::bilstm_encode(tape, *fwd, *bwd, h);
    return projection.forward(tape, h);
  }

  /// Training objective for one sentence: CRF negative log-likelihood, or the
  /// summed token cross-entropy for the softmax variant.
  nn::Var loss(nn::Tape& tape, const nn::Matrix& input, std::span<const BioTag> gold) {
    const nn::Var e = emissions(tape, input);
    if (crf) return crf_nll(tape, e, *crf, gold);
    std::vector<int> g;
    for (BioTag t : gold) g.push_back(static_cast<int>(t));
    return tape.softmax_xent_cols(e, g);
  }

  template <typename Self, typename F>
  static void visit_all(Self& s, std::string_view prefix, F& f) {
    if (s.attention) s.attention->visit(nn::join_name(prefix, "attention"), f);
    if (s.fwd) s.fwd->visit(nn::join_name(prefix, "lstm_fwd"), f);
    if (s.bwd) s.bwd->visit(nn::join_name(prefix, "lstm_bwd"), f);
    s.projection.visit(nn::join_name(prefix, "projection"), f);
    if (s.crf) s.crf->visit(nn::join_name(prefix, "crf"), f);
  }
  template <typename F>
  void visit(std::string_view prefix, F&& f) { visit_all(*this, prefix, f); }
  template <typename F>
  void visit(std::string_view prefix, F&& f) const { visit_all(*this, prefix, f); }
};

/// T x K emission matrix for a token sequence.
inline nn::Matrix emission_scores(TaggerModel& model, std::span<const Token> tokens,
                                  std::span<const std::vector<std::string>> token_features = {}) {
  if (tokens.empty()) throw Error(ErrorKind::EmptySequence, "cannot tag an empty token sequence");
  nn::Tape tape;
  return tape.value(model.emissions(tape, model.encode_input(tokens, token_features))).transpose();
}

/// Rewrites an I that follows O (or opens the sequence) as B.
inline std::vector<BioTag> repair_bio(std::vector<BioTag> tags) {
  BioTag prev = BioTag::O;
  for (auto& t : tags) {
    if (t == BioTag::I && prev == BioTag::O) t = BioTag::B;
    prev = t;
  }
  return tags;
}

inline std::vector<BioTag> decode_emissions(const TaggerModel& model, const nn::Matrix& emissions_tk) {
  if (model.crf) return viterbi_decode(emissions_tk, *model.crf);
  std::vector<BioTag> tags;
  for (nn::Index t = 0; t < emissions_tk.rows(); ++t) {
    nn::Index best = 0;
    for (nn::Index k = 1; k < emissions_tk.cols(); ++k)
      if (emissions_tk(t, k) > emissions_tk(t, best)) best = k;
    tags.push_back(static_cast<BioTag>(best));
  }
  return repair_bio(std::move(tags));
}

inline std::vector<BioTag> tag(TaggerModel& model, std::span<const Token> tokens,
                               std::span<const std::vector<std::string>> token_features = {}) {
  return decode_emissions(model, emission_scores(model, tokens, token_features));
}

/// Tags a prepared tweet (tokens must be present).
inline std::vector<BioTag> tag(TaggerModel& model, const Tweet& tweet) {
  if (!tweet.tokens) throw Error(ErrorKind::EmptySequence, "tweet " + tweet.id + " is not tokenized");
  return tag(model, *tweet.tokens, tweet.token_features);
}

/// Token texts of every maximal B I* run, joined by single spaces.
inline std::vector<std::string> extract_anchors(std::span<const Token> tokens, std::span<const BioTag> tags) {
  if (tokens.size() != tags.size())
    throw Error(ErrorKind::LengthMismatch,
                std::to_string(tags.size()) + " tags for " + std::to_string(tokens.size()) + " tokens");
  if (!well_formed(tags)) throw Error(ErrorKind::MalformedTags, "I tag without a preceding B or I");
  std::vector<std::string> anchors;
  for (const Span& s : bio_to_spans(tags)) {
    std::string a;
    for (std::size_t t = s.start; t < s.end; ++t) {
      if (t > s.start) a += ' ';
      a += tokens[t].text;
    }
    anchors.push_back(std::move(a));
  }
  return anchors;
}

struct TaggingMetrics {
  Metrics span;   // exact (start, end) matches; accuracy = share of sentences with identical span sets
  Metrics token;  // B or I as the positive class
};

/// Span-level exact-match metrics over aligned per-sentence span lists.
inline Metrics evaluate_spans(std::span<const std::vector<Span>> pred, std::span<const std::vector<Span>> gold) {
  if (pred.size() != gold.size())
    throw Error(ErrorKind::CorpusMismatch,
                std::to_string(pred.size()) + " predicted sentences for " + std::to_string(gold.size()) + " gold");
  std::size_t tp = 0, fp = 0, fn = 0, exact = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::set<Span> p(pred[i].begin(), pred[i].end()), g(gold[i].begin(), gold[i].end());
    std::size_t hit = 0;
    for (const Span& s : p) hit += g.count(s);
    tp += hit;
    fp += p.size() - hit;
    fn += g.size() - hit;
    exact += p == g;
  }
  Metrics m = metrics_from_counts(tp, fp, fn, 0);
  m.accuracy = pred.empty() ? 0.0 : static_cast<double>(exact) / static_cast<double>(pred.size());
  return m;
}

inline TaggingMetrics evaluate_tagging(std::span<const std::vector<BioTag>> pred,
                                       std::span<const std::vector<BioTag>> gold) {
  if (pred.size() != gold.size())
    throw Error(ErrorKind::CorpusMismatch,
                std::to_string(pred.size()) + " predicted sentences for " + std::to_string(gold.size()) + " gold");
  std::vector<std::vector<Span>> ps, gs;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != gold[i].size())
      throw Error(ErrorKind::CorpusMismatch, "sentence " + std::to_string(i) + " has mismatched tag counts");
    ps.push_back(bio_to_spans(pred[i]));
    gs.push_back(bio_to_spans(gold[i]));
    for (std::size_t t = 0; t < pred[i].size(); ++t) {
      const bool p = pred[i][t] != BioTag::O, g = gold[i][t] != BioTag::O;
      if (p && g) ++tp;
      else if (p) ++fp;
      else if (g) ++fn;
      else ++tn;
    }
  }
  return {evaluate_spans(ps, gs), metrics_from_counts(tp, fp, fn, tn)};
}

struct TaggerConfig {
  nn::Index lstm_hidden = 32;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t patience = 5;
  std::uint64_t seed = 1;
  nn::OptimizerKind optimizer = nn::OptimizerKind::Adam;
  // Called after every epoch with (epoch, mean training loss, validation span F1).
  std::function<void(std::size_t, double, double)> on_epoch;
};

namespace detail {

struct TaggerExample {
  nn::Matrix input;
  std::vector<BioTag> gold;
};

inline std::vector<std::vector<std::string>> collect_feature_values(const std::vector<AnnotatedTweet>& data) {
  std::vector<std::set<std::string>> slots;
  for (const auto& a : data)
    for (const auto& feats : a.tweet.token_features) {
      if (feats.size() > slots.size()) slots.resize(feats.size());
      for (std::size_t s = 0; s < feats.size(); ++s) slots[s].insert(feats[s]);
    }
  std::vector<std::vector<std::string>> out;
  for (auto& s : slots) out.emplace_back(s.begin(), s.end());
  return out;
}

inline const std::vector<Token>& tokens_of(const AnnotatedTweet& a) {
  if (!a.tweet.tokens) throw Error(ErrorKind::EmptySequence, "tweet " + a.tweet.id + " is not tokenized");
  return *a.tweet.tokens;
}

}  // namespace detail

/// Tags every sentence and scores against the gold tags. Sentences without
/// tokens are skipped.
inline TaggingMetrics evaluate_tagger(TaggerModel& model, const std::vector<AnnotatedTweet>& data) {
  std::vector<std::vector<BioTag>> pred, gold;
  for (const auto& a : data) {
    if (!a.bio_tags) throw Error(ErrorKind::MissingTags, "tweet " + a.tweet.id + " has no BIO tags");
    if (detail::tokens_of(a).empty()) continue;
    pred.push_back(tag(model, a.tweet));
    gold.push_back(*a.bio_tags);
  }
  return evaluate_tagging(pred, gold);
}

/// Minimises the mean per-sentence loss with mini-batches and returns the
/// checkpoint with the best validation span F1 (training set when the
/// validation set is empty). Stops after `patience` epochs without
/// improvement.
inline TaggerModel train_tagger(const Split& split, TaggerVariant variant,
                                std::shared_ptr<const EmbeddingTable> embeddings, const TaggerConfig& cfg) {
  if (split.train.empty()) throw Error(ErrorKind::EmptyCorpus, "empty training set");
  for (const auto* part : {&split.train, &split.val})
    for (const auto& a : *part)
      if (!a.bio_tags) throw Error(ErrorKind::MissingTags, "tweet " + a.tweet.id + " has no BIO tags");

  Rng rng(cfg.seed);
  TaggerModel model =
      TaggerModel::init(variant, std::move(embeddings), detail::collect_feature_values(split.train), cfg.lstm_hidden, rng);

  std::vector<detail::TaggerExample> train;
  for (const auto& a : split.train) {
    const auto& tokens = detail::tokens_of(a);
    if (tokens.empty()) continue;
    train.push_back({model.encode_input(tokens, a.tweet.token_features), *a.bio_tags});
  }
  if (train.empty()) throw Error(ErrorKind::EmptyCorpus, "no training sentence has tokens");
  const auto& val_set = split.val.empty() ? split.train : split.val;

  nn::Optimizer opt(cfg.optimizer, cfg.learning_rate);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);

  TaggerModel best = model;
  double best_f1 = -1;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += batch) {
      const std::size_t b1 = std::min(order.size(), b0 + batch);
      nn::zero_grad(model);
      for (std::size_t k = b0; k < b1; ++k) {
        const auto& ex = train[order[k]];
        nn::Tape tape;
        const nn::Var l = model.loss(tape, ex.input, ex.gold);
        total += tape.scalar(l);
        tape.backward(tape.scale(l, 1.0 / static_cast<double>(b1 - b0)));
      }
      opt.step(model);
    }
    const double f1 = evaluate_tagger(model, val_set).span.f1;
    if (cfg.on_epoch) cfg.on_epoch(epoch, total / static_cast<double>(train.size()), f1);
    if (f1 > best_f1) {
      best_f1 = f1;
      best = model;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return best;
}

inline void save_tagger(const TaggerModel& model, const std::string& path, nlohmann::json extra_meta = {}) {
  nlohmann::json meta = extra_meta.is_object() ? std::move(extra_meta) : nlohmann::json::object();
  meta["variant"] = to_string(model.variant);
  meta["lstm_hidden"] = model.lstm_hidden();
  meta["embedding_dim"] = model.embeddings->dim();
  meta["feature_values"] = model.feature_values;
  write_model_file(path, "tagger/" + std::string(to_string(model.variant)), nn::params_to_json(model), std::move(meta));
}

/// Loads a tagger saved by save_tagger. The embedding table must be the one
/// the model was trained with.
inline TaggerModel load_tagger(const std::string& path, std::shared_ptr<const EmbeddingTable> embeddings) {
  const auto doc = read_model_file(path);
  try {
    const auto& meta = doc["meta"];
    const auto variant = parse_variant(meta.at("variant").get<std::string>());
    if (!variant) throw Error(ErrorKind::CorruptFile, path + ": unknown variant");
    if (meta.at("embedding_dim").get<std::size_t>() != embeddings->dim())
      throw Error(ErrorKind::DimensionMismatch, path + ": model expects embedding dim " +
                                                    std::to_string(meta.at("embedding_dim").get<std::size_t>()));
    TaggerModel m = TaggerModel::zeros(*variant, std::move(embeddings),
                                       meta.at("feature_values").get<std::vector<std::vector<std::string>>>(),
                                       meta.at("lstm_hidden").get<nn::Index>());
    nn::params_from_json(m, doc["params"]);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::CorruptFile, path + ": " + e.what());
  }
}

}  // namespace misinfo
