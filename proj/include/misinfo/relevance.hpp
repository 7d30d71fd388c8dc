#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "misinfo/corpus.hpp"
#include "misinfo/embeddings.hpp"
#include "misinfo/error.hpp"
#include "misinfo/metrics.hpp"
#include "misinfo/model_io.hpp"
#include "misinfo/neural.hpp"

namespace misinfo {

enum class RelevanceMode { Tfidf, Weighted };

inline std::string_view to_string(RelevanceMode m) { return m == RelevanceMode::Tfidf ? "tfidf" : "weighted"; }

inline std::optional<RelevanceMode> parse_mode(std::string_view s) {
  if (s == "tfidf") return RelevanceMode::Tfidf;
  if (s == "weighted" || s == "tfidf_weighted_embedding") return RelevanceMode::Weighted;
  return std::nullopt;
}

/// Smoothed idf: idf(w) = ln((1 + N) / (1 + df(w))) + 1. Columns follow the
/// lexicographic order of the vocabulary.
struct TfidfModel {
  std::vector<std::string> words;
  std::unordered_map<std::string, std::size_t> vocabulary;
  Vector idf;
  std::size_t doc_count = 0;

  std::size_t size() const { return words.size(); }

  std::optional<std::size_t> column(std::string_view w) const {
    auto it = vocabulary.find(std::string(w));
    if (it == vocabulary.end()) return std::nullopt;
    return it->second;
  }

  std::optional<double> idf_of(std::string_view w) const {
    if (auto c = column(w)) return idf(static_cast<Eigen::Index>(*c));
    return std::nullopt;
  }
};

inline TfidfModel make_tfidf(std::vector<std::string> words, Vector idf, std::size_t doc_count) {
  TfidfModel m;
  m.words = std::move(words);
  for (std::size_t i = 0; i < m.words.size(); ++i) m.vocabulary.emplace(m.words[i], i);
  m.idf = std::move(idf);
  m.doc_count = doc_count;
  return m;
}

inline TfidfModel fit_tfidf(const std::vector<std::vector<std::string>>& docs) {
  if (docs.empty()) throw Error(ErrorKind::EmptyCorpus, "tfidf needs at least one document");
  std::map<std::string, std::size_t> df;
  for (const auto& d : docs) {
    std::vector<std::string> uniq(d.begin(), d.end());
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (auto& w : uniq) ++df[w];
  }
  std::vector<std::string> words;
  Vector idf(static_cast<Eigen::Index>(df.size()));
  const double n = static_cast<double>(docs.size());
  for (const auto& [w, count] : df) {
    idf(static_cast<Eigen::Index>(words.size())) = std::log((1.0 + n) / (1.0 + static_cast<double>(count))) + 1.0;
    words.push_back(w);
  }
  return make_tfidf(std::move(words), std::move(idf), docs.size());
}

/// Unnormalised count(w) * idf(w) per in-vocabulary word, sorted by column.
inline std::vector<std::pair<std::size_t, double>> tfidf_weights(const TfidfModel& model,
                                                                 std::span<const std::string> tokens) {
  std::map<std::size_t, double> w;
  for (const auto& t : tokens)
    if (auto c = model.column(t)) w[*c] += model.idf(static_cast<Eigen::Index>(*c));
  return {w.begin(), w.end()};
}

/// L2-normalised tfidf vector in sparse (column, value) form; unknown tokens
/// are ignored and an all-unknown input gives the zero vector (no entries).
inline std::vector<std::pair<std::size_t, double>> tfidf_vector(const TfidfModel& model,
                                                                std::span<const std::string> tokens) {
  auto v = tfidf_weights(model, tokens);
  double norm = 0;
  for (auto& [c, x] : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0)
    for (auto& [c, x] : v) x /= norm;
  return v;
}

inline Vector tfidf_dense(const TfidfModel& model, std::span<const std::string> tokens) {
  Vector out = Vector::Zero(static_cast<Eigen::Index>(model.size()));
  for (auto [c, x] : tfidf_vector(model, tokens)) out(static_cast<Eigen::Index>(c)) = x;
  return out;
}

/// Tfidf-weighted mean of the embeddings of tokens known to both models;
/// the zero vector when none qualifies.
inline Vector sentence_vector(const TfidfModel& model, const EmbeddingTable& embeddings,
                              std::span<const std::string> tokens) {
  Vector sum = Vector::Zero(static_cast<Eigen::Index>(embeddings.dim()));
  double total = 0;
  for (auto [c, w] : tfidf_weights(model, tokens)) {
    const auto row = embeddings.resolve(model.words[c]);
    if (!row) continue;
    sum += w * embeddings.vectors().row(static_cast<Eigen::Index>(*row)).transpose();
    total += w;
  }
  if (total > 0) sum /= total;
  return sum;
}

/// Lowercased token texts with pure-punctuation tokens dropped.
inline std::vector<std::string> relevance_tokens(std::span<const Token> tokens) {
  std::vector<std::string> out;
  for (const auto& t : tokens) {
    const bool has_word = std::any_of(t.text.begin(), t.text.end(), [](char c) {
      return !detail::is_ascii_punct(static_cast<unsigned char>(c));
    });
    if (has_word) out.push_back(detail::ascii_lower(t.text));
  }
  return out;
}

inline std::vector<std::string> relevance_tokens(const Tweet& tweet) {
  if (!tweet.tokens) throw Error(ErrorKind::EmptySequence, "tweet " + tweet.id + " is not tokenized");
  return relevance_tokens(*tweet.tokens);
}

struct RelevanceConfig {
  std::vector<nn::Index> hidden = {1024, 512, 256};
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t patience = 5;
  std::uint64_t seed = 1;
  double decision_threshold = 0.5;
  nn::OptimizerKind optimizer = nn::OptimizerKind::Adam;
  // Called after every epoch with (epoch, mean training loss, validation F1).
  std::function<void(std::size_t, double, double)> on_epoch;
};

struct RelevanceModel {
  RelevanceMode mode = RelevanceMode::Weighted;
  TfidfModel tfidf;
  std::shared_ptr<const EmbeddingTable> embeddings;  // weighted mode only
  nn::DenseNet net;
  double decision_threshold = 0.5;

  nn::Index input_dim() const {
    return mode == RelevanceMode::Tfidf ? static_cast<nn::Index>(tfidf.size())
                                        : static_cast<nn::Index>(embeddings->dim());
  }

  Vector features(std::span<const std::string> tokens) const {
    return mode == RelevanceMode::Tfidf ? tfidf_dense(tfidf, tokens) : sentence_vector(tfidf, *embeddings, tokens);
  }

  template <typename F>
  void visit(std::string_view prefix, F&& f) { net.visit(nn::join_name(prefix, "net"), f); }
  template <typename F>
  void visit(std::string_view prefix, F&& f) const { net.visit(nn::join_name(prefix, "net"), f); }
};

/// Ties at the threshold are positive.
inline int apply_threshold(double probability, double threshold) { return probability >= threshold ? 1 : 0; }

inline double predict_probability(RelevanceModel& model, std::span<const std::string> tokens) {
  return nn::ffn_forward(model.net, model.features(tokens))(0);
}

inline std::pair<double, int> predict_relevance(RelevanceModel& model, const Tweet& tweet) {
  const double p = predict_probability(model, relevance_tokens(tweet));
  return {p, apply_threshold(p, model.decision_threshold)};
}

namespace detail {

inline nn::Matrix feature_matrix(const RelevanceModel& model, const std::vector<std::vector<std::string>>& docs) {
  nn::Matrix X(model.input_dim(), static_cast<nn::Index>(docs.size()));
  for (std::size_t i = 0; i < docs.size(); ++i) X.col(static_cast<nn::Index>(i)) = model.features(docs[i]);
  return X;
}

inline std::vector<int> predict_batch(RelevanceModel& model, const nn::Matrix& X) {
  nn::Tape tape;
  const nn::Matrix& p = tape.value(model.net.forward(tape, tape.constant(X)));
  std::vector<int> out(static_cast<std::size_t>(X.cols()));
  for (nn::Index i = 0; i < X.cols(); ++i) out[static_cast<std::size_t>(i)] = apply_threshold(p(0, i), model.decision_threshold);
  return out;
}

}  // namespace detail

inline Metrics evaluate_relevance(RelevanceModel& model, const std::vector<AnnotatedTweet>& data) {
  std::vector<std::vector<std::string>> docs;
  std::vector<int> gold;
  for (const auto& a : data) {
    docs.push_back(relevance_tokens(a.tweet));
    gold.push_back(a.relevant ? 1 : 0);
  }
  if (docs.empty()) return metrics_from_counts(0, 0, 0, 0);
  return evaluate_classifier(detail::predict_batch(model, detail::feature_matrix(model, docs)), gold);
}

/// Fits tfidf on the training tweets, then trains the 1024/512/256 network
/// with mean binary cross-entropy. Returns the checkpoint with the best
/// validation F1 (training F1 when there is no validation set).
inline RelevanceModel train_relevance(const Split& split, RelevanceMode mode,
                                      std::shared_ptr<const EmbeddingTable> embeddings, const RelevanceConfig& cfg) {
  std::size_t positives = 0;
  for (const auto& a : split.train) positives += a.relevant;
  if (positives == 0 || positives == split.train.size())
    throw Error(ErrorKind::SingleClassTrainingSet, "training set needs both relevant and non-relevant tweets");
  if (mode == RelevanceMode::Weighted && !embeddings)
    throw Error(ErrorKind::EmptyVocabulary, "weighted mode needs an embedding table");

  std::vector<std::vector<std::string>> train_docs, val_docs;
  nn::Matrix y_train(1, static_cast<nn::Index>(split.train.size()));
  std::vector<int> val_gold;
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    train_docs.push_back(relevance_tokens(split.train[i].tweet));
    y_train(0, static_cast<nn::Index>(i)) = split.train[i].relevant ? 1.0 : 0.0;
  }
  for (const auto& a : split.val) {
    val_docs.push_back(relevance_tokens(a.tweet));
    val_gold.push_back(a.relevant ? 1 : 0);
  }

  RelevanceModel model;
  model.mode = mode;
  model.tfidf = fit_tfidf(train_docs);
  model.embeddings = std::move(embeddings);
  model.decision_threshold = cfg.decision_threshold;

  Rng rng(cfg.seed);
  std::vector<nn::Index> dims{model.input_dim()};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(1);
  model.net = nn::DenseNet::init(dims, rng);

  const nn::Matrix X_train = detail::feature_matrix(model, train_docs);
  const bool has_val = !val_docs.empty();
  const nn::Matrix X_val = has_val ? detail::feature_matrix(model, val_docs) : X_train;
  std::vector<int> train_gold;
  for (nn::Index i = 0; i < y_train.cols(); ++i) train_gold.push_back(static_cast<int>(y_train(0, i)));
  const std::vector<int>& eval_gold = has_val ? val_gold : train_gold;

  nn::Optimizer opt(cfg.optimizer, cfg.learning_rate);
  std::vector<std::size_t> order(train_docs.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);

  RelevanceModel best = model;
  double best_f1 = -1;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += batch) {
      const std::size_t b1 = std::min(order.size(), b0 + batch);
      const auto n = static_cast<nn::Index>(b1 - b0);
      nn::Matrix xb(X_train.rows(), n), yb(1, n);
      for (nn::Index k = 0; k < n; ++k) {
        const auto i = static_cast<nn::Index>(order[b0 + static_cast<std::size_t>(k)]);
        xb.col(k) = X_train.col(i);
        yb(0, k) = y_train(0, i);
      }
      nn::zero_grad(model);
      nn::Tape tape;
      const nn::Var loss = tape.bce_with_logits(model.net.logits(tape, tape.constant(std::move(xb))), yb);
      total += tape.scalar(loss) * static_cast<double>(n);
      tape.backward(loss);
      opt.step(model);
    }
    const double f1 = evaluate_classifier(detail::predict_batch(model, X_val), eval_gold).f1;
    if (cfg.on_epoch) cfg.on_epoch(epoch, total / static_cast<double>(order.size()), f1);
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

inline void save_relevance(const RelevanceModel& model, const std::string& path, nlohmann::json extra_meta = {}) {
  nlohmann::json meta = extra_meta.is_object() ? std::move(extra_meta) : nlohmann::json::object();
  meta["mode"] = to_string(model.mode);
  meta["layer_dims"] = model.net.layer_dims;
  meta["decision_threshold"] = model.decision_threshold;
  meta["tfidf_words"] = model.tfidf.words;
  meta["tfidf_idf"] = std::vector<double>(model.tfidf.idf.data(), model.tfidf.idf.data() + model.tfidf.idf.size());
  meta["tfidf_doc_count"] = model.tfidf.doc_count;
  if (model.embeddings) meta["embedding_dim"] = model.embeddings->dim();
  write_model_file(path, "relevance/" + std::string(to_string(model.mode)), nn::params_to_json(model), std::move(meta));
}

/// `embeddings` is required for weighted-mode models and ignored otherwise.
inline RelevanceModel load_relevance(const std::string& path, std::shared_ptr<const EmbeddingTable> embeddings = nullptr) {
  const auto doc = read_model_file(path);
  try {
    const auto& meta = doc["meta"];
    const auto mode = parse_mode(meta.at("mode").get<std::string>());
    if (!mode) throw Error(ErrorKind::CorruptFile, path + ": unknown relevance mode");
    RelevanceModel m;
    m.mode = *mode;
    const auto idf = meta.at("tfidf_idf").get<std::vector<double>>();
    m.tfidf = make_tfidf(meta.at("tfidf_words").get<std::vector<std::string>>(),
                         Eigen::Map<const Vector>(idf.data(), static_cast<Eigen::Index>(idf.size())),
                         meta.at("tfidf_doc_count").get<std::size_t>());
    if (m.tfidf.words.size() != idf.size()) throw Error(ErrorKind::CorruptFile, path + ": tfidf tables disagree");
    m.decision_threshold = meta.at("decision_threshold").get<double>();
    if (m.mode == RelevanceMode::Weighted) {
      if (!embeddings) throw Error(ErrorKind::EmptyVocabulary, path + ": weighted model needs an embedding table");
      if (meta.at("embedding_dim").get<std::size_t>() != embeddings->dim())
        throw Error(ErrorKind::DimensionMismatch, path + ": embedding dim differs from the training table");
      m.embeddings = std::move(embeddings);
    }
    const auto dims = meta.at("layer_dims").get<std::vector<nn::Index>>();
    if (dims.size() < 2) throw Error(ErrorKind::CorruptFile, path + ": bad layer_dims");
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) m.net.layers.push_back(nn::Dense::zeros(dims[l], dims[l + 1]));
    m.net.layer_dims = dims;
    if (dims.front() != m.input_dim()) throw Error(ErrorKind::CorruptFile, path + ": input dim disagrees with features");
    nn::params_from_json(m, doc["params"]);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::CorruptFile, path + ": " + e.what());
  }
}

}  // namespace misinfo
