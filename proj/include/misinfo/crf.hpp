#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "misinfo/corpus.hpp"
#include "misinfo/error.hpp"
#include "misinfo/neural.hpp"

namespace misinfo {

/// Linear-chain CRF over the B, I, O tag set. transitions(i, j) scores tag j
/// following tag i. Emission matrices are T x K (one row per token).
struct CrfLayer {
  nn::Parameter transitions;
  nn::Parameter start;
  nn::Parameter end;

  static CrfLayer zeros(nn::Index k = static_cast<nn::Index>(kNumTags)) {
    return {nn::Parameter(nn::Matrix::Zero(k, k)), nn::Parameter(nn::Matrix::Zero(k, 1)),
            nn::Parameter(nn::Matrix::Zero(k, 1))};
  }

  nn::Index num_tags() const { return transitions.value.rows(); }

  template <typename F>
  void visit(std::string_view prefix, F&& f) {
    f(nn::join_name(prefix, "transitions"), transitions);
    f(nn::join_name(prefix, "start"), start);
    f(nn::join_name(prefix, "end"), end);
  }
  template <typename F>
  void visit(std::string_view prefix, F&& f) const {
    f(nn::join_name(prefix, "transitions"), transitions);
    f(nn::join_name(prefix, "start"), start);
    f(nn::join_name(prefix, "end"), end);
  }
};

namespace detail {

inline double logsumexp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

inline void check_emissions(const nn::Matrix& emissions, const CrfLayer& crf) {
  if (emissions.rows() == 0) throw Error(ErrorKind::EmptySequence, "CRF over an empty sequence");
  if (emissions.cols() != crf.num_tags())
    throw Error(ErrorKind::DimensionMismatch, "emissions have " + std::to_string(emissions.cols()) + " columns, CRF has " +
                                                  std::to_string(crf.num_tags()) + " tags");
}

// Log-space forward (alpha) and backward (beta) tables, T x K.
struct ForwardBackward {
  nn::Matrix alpha;
  nn::Matrix beta;
  double log_z = 0;
};

inline ForwardBackward forward_backward(const nn::Matrix& e, const nn::Matrix& trans, const nn::Matrix& start,
                                        const nn::Matrix& end) {
  const nn::Index T = e.rows(), K = e.cols();
  ForwardBackward fb{nn::Matrix(T, K), nn::Matrix(T, K), 0.0};
  Eigen::VectorXd tmp(K);
  for (nn::Index k = 0; k < K; ++k) fb.alpha(0, k) = start(k, 0) + e(0, k);
  for (nn::Index t = 1; t < T; ++t)
    for (nn::Index j = 0; j < K; ++j) {
      for (nn::Index i = 0; i < K; ++i) tmp(i) = fb.alpha(t - 1, i) + trans(i, j);
      fb.alpha(t, j) = logsumexp(tmp) + e(t, j);
    }
  for (nn::Index k = 0; k < K; ++k) fb.beta(T - 1, k) = end(k, 0);
  for (nn::Index t = T - 1; t-- > 0;)
    for (nn::Index i = 0; i < K; ++i) {
      for (nn::Index j = 0; j < K; ++j) tmp(j) = trans(i, j) + e(t + 1, j) + fb.beta(t + 1, j);
      fb.beta(t, i) = logsumexp(tmp);
    }
  for (nn::Index k = 0; k < K; ++k) tmp(k) = fb.alpha(T - 1, k) + end(k, 0);
  fb.log_z = logsumexp(tmp);
  return fb;
}

inline double path_score(const nn::Matrix& e, const nn::Matrix& trans, const nn::Matrix& start, const nn::Matrix& end,
                         std::span<const int> tags) {
  double s = start(tags[0], 0) + end(tags.back(), 0);
  for (std::size_t t = 0; t < tags.size(); ++t) {
    s += e(static_cast<nn::Index>(t), tags[t]);
    if (t > 0) s += trans(tags[t - 1], tags[t]);
  }
  return s;
}

inline std::vector<int> tag_indices(std::span<const BioTag> tags) {
  std::vector<int> out;
  out.reserve(tags.size());
  for (BioTag t : tags) out.push_back(static_cast<int>(t));
  return out;
}

}  // namespace detail

/// start + sum of emissions + sum of transitions + end for one tag path.
inline double crf_path_score(const nn::Matrix& emissions, const CrfLayer& crf, std::span<const BioTag> tags) {
  detail::check_emissions(emissions, crf);
  if (static_cast<nn::Index>(tags.size()) != emissions.rows())
    throw Error(ErrorKind::LengthMismatch, "tag path length differs from emissions");
  const auto idx = detail::tag_indices(tags);
  return detail::path_score(emissions, crf.transitions.value, crf.start.value, crf.end.value, idx);
}

/// log of the sum over all K^T paths of exp(path score), by the forward
/// algorithm in log space. No well-formedness mask is applied.
inline double crf_log_partition(const nn::Matrix& emissions, const CrfLayer& crf) {
  detail::check_emissions(emissions, crf);
  return detail::forward_backward(emissions, crf.transitions.value, crf.start.value, crf.end.value).log_z;
}

inline double crf_nll(const nn::Matrix& emissions, const CrfLayer& crf, std::span<const BioTag> gold) {
  return crf_log_partition(emissions, crf) - crf_path_score(emissions, crf, gold);
}

/// Highest-scoring well-formed path: start->I and O->I are forbidden at
/// decode time. Ties go to the lowest tag index (B < I < O), both at the
/// final position and at every back-pointer.
inline std::vector<BioTag> viterbi_decode(const nn::Matrix& emissions, const CrfLayer& crf) {
  detail::check_emissions(emissions, crf);
  const nn::Index T = emissions.rows(), K = emissions.cols();
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  const auto I = static_cast<nn::Index>(BioTag::I), O = static_cast<nn::Index>(BioTag::O);

  nn::Matrix trans = crf.transitions.value;
  nn::Matrix start = crf.start.value;
  if (K == static_cast<nn::Index>(kNumTags)) {
    trans(O, I) = kNegInf;
    start(I, 0) = kNegInf;
  }

  nn::Matrix delta(T, K);
  Eigen::MatrixXi back(T, K);
  for (nn::Index k = 0; k < K; ++k) delta(0, k) = start(k, 0) + emissions(0, k);
  for (nn::Index t = 1; t < T; ++t)
    for (nn::Index j = 0; j < K; ++j) {
      nn::Index best = 0;
      double best_score = delta(t - 1, 0) + trans(0, j);
      for (nn::Index i = 1; i < K; ++i) {
        const double s = delta(t - 1, i) + trans(i, j);
        if (s > best_score) {
          best_score = s;
          best = i;
        }
      }
      delta(t, j) = best_score + emissions(t, j);
      back(t, j) = static_cast<int>(best);
    }
  nn::Index last = 0;
  double best_final = delta(T - 1, 0) + crf.end.value(0, 0);
  for (nn::Index k = 1; k < K; ++k) {
    const double s = delta(T - 1, k) + crf.end.value(k, 0);
    if (s > best_final) {
      best_final = s;
      last = k;
    }
  }
  std::vector<BioTag> path(static_cast<std::size_t>(T));
  for (nn::Index t = T; t-- > 0;) {
    path[static_cast<std::size_t>(t)] = static_cast<BioTag>(last);
    if (t > 0) last = back(t, last);
  }
  return path;
}

/// CRF negative log-likelihood as a tape node. `emissions` is K x T (one
/// column per token, the layout dense layers produce). Gradients are the
/// forward-backward marginals minus the gold indicator counts.
inline nn::Var crf_nll(nn::Tape& tape, nn::Var emissions, CrfLayer& crf, std::span<const BioTag> gold) {
  const nn::Matrix e = tape.value(emissions).transpose();
  detail::check_emissions(e, crf);
  if (static_cast<nn::Index>(gold.size()) != e.rows())
    throw Error(ErrorKind::LengthMismatch, "gold path length differs from emissions");
  const nn::Var trans = tape.param(crf.transitions);
  const nn::Var start = tape.param(crf.start);
  const nn::Var end = tape.param(crf.end);
  const auto fb = detail::forward_backward(e, tape.value(trans), tape.value(start), tape.value(end));
  const std::vector<int> g = detail::tag_indices(gold);
  const double nll = fb.log_z - detail::path_score(e, tape.value(trans), tape.value(start), tape.value(end), g);

  return tape.custom(nn::Matrix::Constant(1, 1, nll), {emissions, trans, start, end},
                     [&tape, e, fb, g, emissions, trans, start, end](nn::Var out) {
                       const double up = tape.grad(out)(0, 0);
                       const nn::Index T = e.rows(), K = e.cols();
                       const nn::Matrix& tr = tape.value(trans);
                       nn::Matrix unary = (fb.alpha + fb.beta).array() - fb.log_z;
                       unary = unary.array().exp().matrix();
                       nn::Matrix pair = nn::Matrix::Zero(K, K);
                       for (nn::Index t = 1; t < T; ++t)
                         for (nn::Index i = 0; i < K; ++i)
                           for (nn::Index j = 0; j < K; ++j)
                             pair(i, j) += std::exp(fb.alpha(t - 1, i) + tr(i, j) + e(t, j) + fb.beta(t, j) - fb.log_z);
                       nn::Matrix d_e = unary;
                       for (nn::Index t = 0; t < T; ++t) d_e(t, g[static_cast<std::size_t>(t)]) -= 1.0;
                       for (nn::Index t = 1; t < T; ++t)
                         pair(g[static_cast<std::size_t>(t - 1)], g[static_cast<std::size_t>(t)]) -= 1.0;
                       nn::Matrix d_start = unary.row(0).transpose();
                       d_start(g.front(), 0) -= 1.0;
                       nn::Matrix d_end = unary.row(T - 1).transpose();
                       d_end(g.back(), 0) -= 1.0;
                       if (tape.needs_grad(emissions)) tape.grad(emissions) += up * d_e.transpose();
                       if (tape.needs_grad(trans)) tape.grad(trans) += up * pair;
                       if (tape.needs_grad(start)) tape.grad(start) += up * d_start;
                       if (tape.needs_grad(end)) tape.grad(end) += up * d_end;
                     });
}

}  // namespace misinfo
