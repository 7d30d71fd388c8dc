#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "misinfo/error.hpp"
#include "misinfo/preprocess.hpp"
#include "misinfo/rng.hpp"

namespace misinfo {

using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Word -> dense vector map. Rows of `vectors()` follow `vocab()` order.
class EmbeddingTable {
 public:
  EmbeddingTable(std::vector<std::string> vocab, RowMatrix vectors)
      : vocab_(std::move(vocab)), vectors_(std::move(vectors)) {
    if (vectors_.cols() == 0) throw Error(ErrorKind::DimensionMismatch, "embedding dim must be positive");
    if (static_cast<std::size_t>(vectors_.rows()) != vocab_.size())
      throw Error(ErrorKind::DimensionMismatch, "vocabulary and vector counts differ");
    index_.reserve(vocab_.size());
    for (std::size_t i = 0; i < vocab_.size(); ++i)
      if (!index_.emplace(vocab_[i], i).second) throw Error(ErrorKind::DuplicateWord, vocab_[i]);
  }

  std::size_t dim() const { return static_cast<std::size_t>(vectors_.cols()); }
  std::size_t size() const { return vocab_.size(); }
  const std::vector<std::string>& vocab() const { return vocab_; }
  const RowMatrix& vectors() const { return vectors_; }

  std::optional<std::size_t> index_of(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<Vector> lookup(std::string_view word) const {
    auto i = index_of(word);
    if (!i) return std::nullopt;
    return Vector(vectors_.row(static_cast<Eigen::Index>(*i)).transpose());
  }

  /// Model-side lookup: exact match, then the lowercased form, else absent.
  std::optional<std::size_t> resolve(std::string_view word) const {
    if (auto i = index_of(word)) return i;
    const std::string lower = detail::ascii_lower(word);
    if (lower != word) return index_of(lower);
    return std::nullopt;
  }

  /// resolve() or the zero vector for out-of-vocabulary words.
  Vector embed(std::string_view word) const {
    if (auto i = resolve(word)) return vectors_.row(static_cast<Eigen::Index>(*i)).transpose();
    return Vector::Zero(static_cast<Eigen::Index>(dim()));
  }

 private:
  std::vector<std::string> vocab_;
  RowMatrix vectors_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline std::optional<Vector> lookup(const EmbeddingTable& table, std::string_view word) {
  return table.lookup(word);
}

/// u.v / (|u||v|), 0 when either norm is zero. Identical non-zero inputs give
/// exactly 1.
inline double cosine(const Vector& u, const Vector& v) {
  if (u.size() != v.size())
    throw Error(ErrorKind::DimensionMismatch,
                "cosine of vectors with dims " + std::to_string(u.size()) + " and " + std::to_string(v.size()));
  const double nu = u.squaredNorm();
  const double nv = v.squaredNorm();
  if (nu == 0.0 || nv == 0.0) return 0.0;
  const double c = u.dot(v) / std::sqrt(nu * nv);
  return std::clamp(c, -1.0, 1.0);
}

namespace detail {

inline std::string format_double(double x) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline bool parse_double(std::string_view s, double& out) {
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline std::vector<std::string_view> split_spaces(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace detail

/// Reads "<vocab_size> <dim>" followed by one "word v1 ... v_dim" row per word.
inline EmbeddingTable load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::MalformedHeader, path + ": missing header");
  const auto header = detail::split_spaces(line);
  std::size_t n = 0, dim = 0;
  auto parse_size = [](std::string_view s, std::size_t& v) {
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    return res.ec == std::errc() && res.ptr == s.data() + s.size();
  };
  if (header.size() != 2 || !parse_size(header[0], n) || !parse_size(header[1], dim) || dim == 0)
    throw Error(ErrorKind::MalformedHeader, path + ": header must be \"<vocab_size> <dim>\" with dim > 0");

  std::vector<std::string> vocab;
  vocab.reserve(n);
  RowMatrix vectors(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  std::unordered_map<std::string, std::size_t> seen;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = detail::split_spaces(line);
    if (vocab.size() == n)
      throw Error(ErrorKind::MalformedHeader, path + ": more rows than the declared " + std::to_string(n));
    if (fields.size() != dim + 1)
      throw Error(ErrorKind::DimensionMismatch, path + ": line " + std::to_string(lineno) + " has " +
                                                    std::to_string(fields.size() - 1) + " values, expected " +
                                                    std::to_string(dim));
    std::string word(fields[0]);
    if (!seen.emplace(word, vocab.size()).second) throw Error(ErrorKind::DuplicateWord, path + ": " + word);
    const auto row = static_cast<Eigen::Index>(vocab.size());
    for (std::size_t d = 0; d < dim; ++d) {
      double v = 0;
      if (!detail::parse_double(fields[d + 1], v))
        throw Error(ErrorKind::DimensionMismatch,
                    path + ": line " + std::to_string(lineno) + ": bad number '" + std::string(fields[d + 1]) + "'");
      vectors(row, static_cast<Eigen::Index>(d)) = v;
    }
    vocab.push_back(std::move(word));
  }
  if (vocab.size() != n)
    throw Error(ErrorKind::MalformedHeader,
                path + ": header declares " + std::to_string(n) + " rows, found " + std::to_string(vocab.size()));
  return EmbeddingTable(std::move(vocab), std::move(vectors));
}

/// Shortest round-trip decimal form, so load(save(t)) == t exactly.
inline void save_embeddings(const EmbeddingTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out << table.size() << ' ' << table.dim() << '\n';
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << table.vocab()[i];
    for (std::size_t d = 0; d < table.dim(); ++d)
      out << ' ' << detail::format_double(table.vectors()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)));
    out << '\n';
  }
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path);
}

struct SkipgramConfig {
  std::size_t dim = 100;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double learning_rate = 0.025;
  double min_learning_rate = 1e-4;
  std::size_t min_count = 2;
  std::uint64_t seed = 1;
};

struct SkipgramResult {
  EmbeddingTable input;      // returned word vectors
  RowMatrix context;         // output-side vectors, same row order
  std::vector<double> epoch_loss;  // mean negative-sampling loss per (center, context) pair
};

/// Skip-gram with negative sampling, single-threaded and fully determined by
/// the seed. Vocabulary is sorted by descending count, then lexicographically.
/// Input vectors start uniform in [-0.5/dim, 0.5/dim], context vectors at
/// zero. Negatives come from the unigram distribution raised to 0.75; a
/// negative equal to the positive context word is skipped. The learning rate
/// decays linearly from learning_rate to min_learning_rate over all pairs.
/// Frequent-word subsampling is not applied.
inline SkipgramResult train_skipgram_detailed(const std::vector<std::vector<std::string>>& sentences,
                                              const SkipgramConfig& cfg) {
  if (cfg.dim == 0 || cfg.window == 0 || cfg.negatives == 0 || cfg.min_count == 0 || !(cfg.learning_rate > 0))
    throw Error(ErrorKind::ShapeMismatch, "skip-gram config values must be positive");

  std::map<std::string, std::size_t> counts;
  for (const auto& s : sentences)
    for (const auto& w : s) ++counts[w];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [w, c] : counts)
    if (c >= cfg.min_count) kept.emplace_back(w, c);
  if (kept.empty()) throw Error(ErrorKind::EmptyVocabulary, "no word reaches min_count " + std::to_string(cfg.min_count));
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

  std::vector<std::string> vocab;
  std::unordered_map<std::string, std::size_t> index;
  for (auto& [w, c] : kept) {
    index.emplace(w, vocab.size());
    vocab.push_back(w);
  }
  const auto V = static_cast<Eigen::Index>(vocab.size());
  const auto D = static_cast<Eigen::Index>(cfg.dim);

  std::vector<double> cumulative(vocab.size());
  double total = 0;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    total += std::pow(static_cast<double>(kept[i].second), 0.75);
    cumulative[i] = total;
  }

  Rng rng(cfg.seed);
  RowMatrix in(V, D), out = RowMatrix::Zero(V, D);
  for (Eigen::Index r = 0; r < V; ++r)
    for (Eigen::Index c = 0; c < D; ++c) in(r, c) = (rng.uniform() - 0.5) / static_cast<double>(cfg.dim);

  std::vector<std::vector<std::size_t>> ids;
  std::size_t pairs_per_epoch = 0;
  for (const auto& s : sentences) {
    std::vector<std::size_t> row;
    for (const auto& w : s)
      if (auto it = index.find(w); it != index.end()) row.push_back(it->second);
    for (std::size_t i = 0; i < row.size(); ++i) {
      const std::size_t lo = i >= cfg.window ? i - cfg.window : 0;
      const std::size_t hi = std::min(row.size() - 1, i + cfg.window);
      pairs_per_epoch += hi - lo;
    }
    ids.push_back(std::move(row));
  }
  const double total_pairs = static_cast<double>(pairs_per_epoch * cfg.epochs);

  auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  auto sample = [&] {
    const double u = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    return std::min(static_cast<std::size_t>(it - cumulative.begin()), vocab.size() - 1);
  };

  std::vector<double> epoch_loss;
  Vector grad_in(D);
  std::size_t done = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss = 0;
    std::size_t pairs = 0;
    for (const auto& row : ids) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        const std::size_t lo = i >= cfg.window ? i - cfg.window : 0;
        const std::size_t hi = std::min(row.size() - 1, i + cfg.window);
        for (std::size_t j = lo; j <= hi; ++j) {
          if (j == i) continue;
          const double progress = total_pairs > 0 ? static_cast<double>(done) / total_pairs : 0.0;
          const double lr =
              std::max(cfg.min_learning_rate, cfg.learning_rate - (cfg.learning_rate - cfg.min_learning_rate) * progress);
          const auto center = static_cast<Eigen::Index>(row[i]);
          const auto context = row[j];
          grad_in.setZero();
          auto update = [&](std::size_t target, double label) {
            const auto t = static_cast<Eigen::Index>(target);
            const double score = in.row(center).dot(out.row(t));
            const double p = sigmoid(score);
            loss -= label > 0 ? std::log(std::max(p, 1e-300)) : std::log(std::max(1.0 - p, 1e-300));
            const double g = (label - p) * lr;
            grad_in += g * out.row(t).transpose();
            out.row(t) += g * in.row(center);
          };
          update(context, 1.0);
          for (std::size_t k = 0; k < cfg.negatives; ++k) {
            const std::size_t neg = sample();
            if (neg == context) continue;
            update(neg, 0.0);
          }
          in.row(center) += grad_in.transpose();
          ++pairs;
          ++done;
        }
      }
    }
    epoch_loss.push_back(pairs ? loss / static_cast<double>(pairs) : 0.0);
  }
  return {EmbeddingTable(std::move(vocab), std::move(in)), std::move(out), std::move(epoch_loss)};
}

inline EmbeddingTable train_skipgram(const std::vector<std::vector<std::string>>& sentences,
                                     const SkipgramConfig& cfg) {
  return train_skipgram_detailed(sentences, cfg).input;
}

}  // namespace misinfo
