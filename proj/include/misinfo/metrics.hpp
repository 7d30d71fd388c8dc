#pragma once

#include <cstddef>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "misinfo/error.hpp"

namespace misinfo {

/// Binary classification metrics; positive class = relevant / anchor.
struct Metrics {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double accuracy = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;
};

/// Undefined ratios (zero denominators) are reported as 0.
inline Metrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
  Metrics m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.tn = tn;
  m.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  const std::size_t n = tp + fp + fn + tn;
  m.accuracy = n ? static_cast<double>(tp + tn) / static_cast<double>(n) : 0.0;
  return m;
}

inline Metrics evaluate_classifier(std::span<const int> preds, std::span<const int> golds) {
  if (preds.size() != golds.size())
    throw Error(ErrorKind::LengthMismatch, std::to_string(preds.size()) + " predictions for " +
                                               std::to_string(golds.size()) + " gold labels");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] != 0, g = golds[i] != 0;
    if (p && g) ++tp;
    else if (p) ++fp;
    else if (g) ++fn;
    else ++tn;
  }
  return metrics_from_counts(tp, fp, fn, tn);
}

inline nlohmann::json to_json(const Metrics& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"accuracy", m.accuracy},
          {"tp", m.tp},               {"fp", m.fp},         {"fn", m.fn}, {"tn", m.tn}};
}

}  // namespace misinfo
