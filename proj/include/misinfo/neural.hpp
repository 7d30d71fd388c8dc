#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "misinfo/error.hpp"
#include "misinfo/rng.hpp"

namespace misinfo::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// A trainable tensor and its accumulated gradient.
struct Parameter {
  Matrix value;
  Matrix grad;

  Parameter() = default;
  explicit Parameter(Matrix v) : value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Glorot/Xavier uniform: U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))),
/// fan_in = cols, fan_out = rows.
inline Matrix glorot(Index rows, Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(-limit, limit);
  return m;
}

inline std::string join_name(std::string_view prefix, std::string_view name) {
  if (prefix.empty()) return std::string(name);
  return std::string(prefix) + "." + std::string(name);
}

/// Reverse-mode tape over dense matrices. Nodes are appended during the
/// forward pass; backward() walks them in reverse. Gradients are only
/// propagated into nodes that depend on a parameter.
class Tape {
 public:
  struct Var {
    std::size_t id = 0;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix v) { return push(std::move(v), false, {}); }

  /// Leaf bound to a parameter; its gradient is added into p.grad.
  Var param(Parameter& p) {
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
    Parameter* ptr = &p;
    const std::size_t id = nodes_.size();
    return push(p.value, true, [this, ptr, id] { ptr->grad += nodes_[id].grad; });
  }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  Matrix& grad(Var v) { return nodes_[v.id].grad; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  double scalar(Var v) const { return nodes_[v.id].value(0, 0); }
  std::size_t size() const { return nodes_.size(); }

  /// Node with a caller-supplied backward. `backward` runs only if any of
  /// `inputs` needs a gradient, and reads the output gradient via grad(out).
  Var custom(Matrix value, std::initializer_list<Var> inputs, std::function<void(Var out)> backward) {
    bool needs = false;
    for (Var in : inputs) needs = needs || needs_grad(in);
    const Var out{nodes_.size()};
    if (!needs) return push(std::move(value), false, {});
    return push(std::move(value), true, [out, backward = std::move(backward)] { backward(out); });
  }

  Var matmul(Var a, Var b) {
    check(value(a).cols() == value(b).rows(), "matmul");
    return custom(value(a) * value(b), {a, b}, [this, a, b](Var o) {
      if (needs_grad(a)) grad(a).noalias() += grad(o) * value(b).transpose();
      if (needs_grad(b)) grad(b).noalias() += value(a).transpose() * grad(o);
    });
  }

  Var add(Var a, Var b) {
    check(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "add");
    return custom(value(a) + value(b), {a, b}, [this, a, b](Var o) {
      if (needs_grad(a)) grad(a) += grad(o);
      if (needs_grad(b)) grad(b) += grad(o);
    });
  }

  /// a (R x C) plus bias (R x 1) broadcast over columns.
  Var add_bias(Var a, Var bias) {
    check(value(bias).cols() == 1 && value(bias).rows() == value(a).rows(), "add_bias");
    Matrix out = value(a);
    out.colwise() += value(bias).col(0);
    return custom(std::move(out), {a, bias}, [this, a, bias](Var o) {
      if (needs_grad(a)) grad(a) += grad(o);
      if (needs_grad(bias)) grad(bias) += grad(o).rowwise().sum();
    });
  }

  Var hadamard(Var a, Var b) {
    check(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "hadamard");
    return custom(value(a).cwiseProduct(value(b)), {a, b}, [this, a, b](Var o) {
      if (needs_grad(a)) grad(a) += grad(o).cwiseProduct(value(b));
      if (needs_grad(b)) grad(b) += grad(o).cwiseProduct(value(a));
    });
  }

  Var scale(Var a, double s) {
    return custom(value(a) * s, {a}, [this, a, s](Var o) { grad(a) += grad(o) * s; });
  }

  Var tanh(Var a) {
    Matrix y = value(a).array().tanh().matrix();
    return custom(std::move(y), {a}, [this, a](Var o) {
      grad(a).array() += grad(o).array() * (1.0 - value(o).array().square());
    });
  }

  Var sigmoid(Var a) {
    Matrix y = (1.0 / (1.0 + (-value(a).array()).exp())).matrix();
    return custom(std::move(y), {a}, [this, a](Var o) {
      grad(a).array() += grad(o).array() * value(o).array() * (1.0 - value(o).array());
    });
  }

  Var relu(Var a) {
    Matrix y = value(a).cwiseMax(0.0);
    return custom(std::move(y), {a}, [this, a](Var o) {
      grad(a).array() += (value(a).array() > 0.0).select(grad(o).array(), 0.0);
    });
  }

  Var transpose(Var a) {
    return custom(value(a).transpose(), {a}, [this, a](Var o) { grad(a) += grad(o).transpose(); });
  }

  Var column(Var a, Index c) {
    check(c >= 0 && c < value(a).cols(), "column");
    return custom(value(a).col(c), {a}, [this, a, c](Var o) { grad(a).col(c) += grad(o).col(0); });
  }

  /// Concatenates blocks with equal row counts side by side.
  Var hstack(const std::vector<Var>& parts) {
    check(!parts.empty(), "hstack");
    const Index rows = value(parts[0]).rows();
    Index cols = 0;
    for (Var p : parts) {
      check(value(p).rows() == rows, "hstack");
      cols += value(p).cols();
    }
    Matrix out(rows, cols);
    Index at = 0;
    for (Var p : parts) {
      out.middleCols(at, value(p).cols()) = value(p);
      at += value(p).cols();
    }
    bool needs = false;
    for (Var p : parts) needs = needs || needs_grad(p);
    if (!needs) return push(std::move(out), false, {});
    const Var o{nodes_.size()};
    return push(std::move(out), true, [this, parts, o] {
      Index at = 0;
      for (Var p : parts) {
        const Index w = value(p).cols();
        if (needs_grad(p)) grad(p) += grad(o).middleCols(at, w);
        at += w;
      }
    });
  }

  /// Stacks a on top of b.
  Var vstack(Var a, Var b) {
    check(value(a).cols() == value(b).cols(), "vstack");
    Matrix out(value(a).rows() + value(b).rows(), value(a).cols());
    out << value(a), value(b);
    return custom(std::move(out), {a, b}, [this, a, b](Var o) {
      if (needs_grad(a)) grad(a) += grad(o).topRows(value(a).rows());
      if (needs_grad(b)) grad(b) += grad(o).bottomRows(value(b).rows());
    });
  }

  /// Softmax applied independently to every column.
  Var softmax_cols(Var a) {
    Matrix y(value(a).rows(), value(a).cols());
    for (Index c = 0; c < y.cols(); ++c) {
      const double mx = value(a).col(c).maxCoeff();
      y.col(c) = (value(a).col(c).array() - mx).exp().matrix();
      y.col(c) /= y.col(c).sum();
    }
    return custom(std::move(y), {a}, [this, a](Var o) {
      const Matrix& y = value(o);
      for (Index c = 0; c < y.cols(); ++c) {
        const double dot = y.col(c).dot(grad(o).col(c));
        grad(a).col(c).array() += y.col(c).array() * (grad(o).col(c).array() - dot);
      }
    });
  }

  /// y[:, t] = w[t] * x[:, t] for a D x T matrix x and a T-vector w.
  Var scale_cols(Var x, Var w) {
    check(value(w).size() == value(x).cols(), "scale_cols");
    Matrix y = value(x);
    for (Index t = 0; t < y.cols(); ++t) y.col(t) *= value(w)(t);
    return custom(std::move(y), {x, w}, [this, x, w](Var o) {
      for (Index t = 0; t < value(x).cols(); ++t) {
        if (needs_grad(x)) grad(x).col(t) += value(w)(t) * grad(o).col(t);
        if (needs_grad(w)) grad(w)(t) += value(x).col(t).dot(grad(o).col(t));
      }
    });
  }

  /// Mean binary cross-entropy of sigmoid(z) against targets y (same shape),
  /// evaluated in the numerically stable logits form. Returns a 1x1 node.
  Var bce_with_logits(Var z, const Matrix& y) {
    check(value(z).rows() == y.rows() && value(z).cols() == y.cols(), "bce_with_logits");
    const auto& zv = value(z).array();
    const double n = static_cast<double>(y.size());
    const double loss =
        (zv.cwiseMax(0.0) - zv * y.array() + (1.0 + (-zv.abs()).exp()).log()).sum() / n;
    return custom(Matrix::Constant(1, 1, loss), {z}, [this, z, y, n](Var o) {
      const Matrix p = (1.0 / (1.0 + (-value(z).array()).exp())).matrix();
      grad(z) += (grad(o)(0, 0) / n) * (p - y);
    });
  }

  /// Sum over columns of the softmax cross-entropy of scores[:, t] against
  /// class gold[t]. Returns a 1x1 node.
  Var softmax_xent_cols(Var scores, const std::vector<int>& gold) {
    check(static_cast<Index>(gold.size()) == value(scores).cols(), "softmax_xent_cols");
    const Matrix& s = value(scores);
    Matrix probs(s.rows(), s.cols());
    double loss = 0;
    for (Index t = 0; t < s.cols(); ++t) {
      const double mx = s.col(t).maxCoeff();
      probs.col(t) = (s.col(t).array() - mx).exp().matrix();
      const double z = probs.col(t).sum();
      probs.col(t) /= z;
      loss += mx + std::log(z) - s(gold[static_cast<std::size_t>(t)], t);
    }
    return custom(Matrix::Constant(1, 1, loss), {scores}, [this, scores, probs, gold](Var o) {
      Matrix g = probs;
      for (Index t = 0; t < g.cols(); ++t) g(gold[static_cast<std::size_t>(t)], t) -= 1.0;
      grad(scores) += grad(o)(0, 0) * g;
    });
  }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward step.
  void backward(Var loss) {
    check(value(loss).size() == 1, "backward needs a scalar loss");
    nodes_[loss.id].grad.setOnes();
    for (std::size_t i = nodes_.size(); i-- > 0;)
      if (nodes_[i].backward && nodes_[i].needs_grad) nodes_[i].backward();
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    std::function<void()> backward;
  };

  Var push(Matrix value, bool needs, std::function<void()> backward) {
    Node n;
    n.grad = needs ? Matrix::Zero(value.rows(), value.cols()) : Matrix();
    n.value = std::move(value);
    n.needs_grad = needs;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  static void check(bool ok, const char* op) {
    if (!ok) throw Error(ErrorKind::DimensionMismatch, std::string("shape mismatch in ") + op);
  }

  std::vector<Node> nodes_;
};

using Var = Tape::Var;

// ---------------------------------------------------------------------------
// Layers

/// y = W x + b.
struct Dense {
  Parameter W;
  Parameter b;

  static Dense init(Index in, Index out, Rng& rng) { return {Parameter(glorot(out, in, rng)), Parameter(Matrix::Zero(out, 1))}; }
  static Dense zeros(Index in, Index out) { return {Parameter(Matrix::Zero(out, in)), Parameter(Matrix::Zero(out, 1))}; }

  Index in_dim() const { return W.value.cols(); }
  Index out_dim() const { return W.value.rows(); }

  Var forward(Tape& tape, Var x) { return tape.add_bias(tape.matmul(tape.param(W), x), tape.param(b)); }

  template <typename F>
  void visit(std::string_view prefix, F&& f) { f(join_name(prefix, "W"), W); f(join_name(prefix, "b"), b); }
  template <typename F>
  void visit(std::string_view prefix, F&& f) const { f(join_name(prefix, "W"), W); f(join_name(prefix, "b"), b); }
};

enum class OutputActivation { Sigmoid, Linear };

/// Fully connected net: ReLU hidden layers, sigmoid or linear output.
struct DenseNet {
  std::vector<Index> layer_dims;  // input, hidden..., output
  std::vector<Dense> layers;
  OutputActivation output = OutputActivation::Sigmoid;

  static DenseNet init(std::vector<Index> dims, Rng& rng, OutputActivation out = OutputActivation::Sigmoid) {
    if (dims.size() < 2) throw Error(ErrorKind::ShapeMismatch, "a dense net needs at least input and output dims");
    DenseNet net;
    net.layer_dims = dims;
    net.output = out;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) net.layers.push_back(Dense::init(dims[l], dims[l + 1], rng));
    return net;
  }

  Index input_dim() const { return layer_dims.front(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l)
      n += static_cast<std::size_t>((layer_dims[l] + 1) * layer_dims[l + 1]);
    return n;
  }

  /// Pre-activation output (logits) for a batch of column inputs.
  Var logits(Tape& tape, Var x) {
    Var h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      h = layers[l].forward(tape, h);
      if (l + 1 < layers.size()) h = tape.relu(h);
    }
    return h;
  }

  Var forward(Tape& tape, Var x) {
    Var z = logits(tape, x);
    return output == OutputActivation::Sigmoid ? tape.sigmoid(z) : z;
  }

  template <typename F>
  void visit(std::string_view prefix, F&& f) {
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].visit(join_name(prefix, "layer" + std::to_string(l)), f);
  }
  template <typename F>
  void visit(std::string_view prefix, F&& f) const {
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].visit(join_name(prefix, "layer" + std::to_string(l)), f);
  }
};

/// Applies the net to one input vector.
inline Vector ffn_forward(DenseNet& net, const Vector& x) {
  if (x.size() != net.input_dim())
    throw Error(ErrorKind::DimensionMismatch,
                "input has dim " + std::to_string(x.size()) + ", net expects " + std::to_string(net.input_dim()));
  Tape tape;
  return tape.value(net.forward(tape, tape.constant(x)));
}

/// -(y ln p + (1-y) ln(1-p)) with p clamped to [1e-12, 1-1e-12].
inline double bce_loss(double p, int y) {
  const double q = std::clamp(p, 1e-12, 1.0 - 1e-12);
  return -(y * std::log(q) + (1 - y) * std::log(1.0 - q));
}

/// LSTM cell parameters. Gate pre-activations are W_* x + U_* h + b_*.
struct LstmParams {
  Parameter W_i, W_f, W_o, W_g;
  Parameter U_i, U_f, U_o, U_g;
  Parameter b_i, b_f, b_o, b_g;

  static LstmParams init(Index input_dim, Index hidden_dim, Rng& rng) {
    LstmParams p;
    for (Parameter* w : {&p.W_i, &p.W_f, &p.W_o, &p.W_g}) *w = Parameter(glorot(hidden_dim, input_dim, rng));
    for (Parameter* u : {&p.U_i, &p.U_f, &p.U_o, &p.U_g}) *u = Parameter(glorot(hidden_dim, hidden_dim, rng));
    for (Parameter* b : {&p.b_i, &p.b_o, &p.b_g}) *b = Parameter(Matrix::Zero(hidden_dim, 1));
    p.b_f = Parameter(Matrix::Ones(hidden_dim, 1));
    return p;
  }

  static LstmParams zeros(Index input_dim, Index hidden_dim) {
    LstmParams p;
    for (Parameter* w : {&p.W_i, &p.W_f, &p.W_o, &p.W_g}) *w = Parameter(Matrix::Zero(hidden_dim, input_dim));
    for (Parameter* u : {&p.U_i, &p.U_f, &p.U_o, &p.U_g}) *u = Parameter(Matrix::Zero(hidden_dim, hidden_dim));
    for (Parameter* b : {&p.b_i, &p.b_f, &p.b_o, &p.b_g}) *b = Parameter(Matrix::Zero(hidden_dim, 1));
    return p;
  }

  Index input_dim() const { return W_i.value.cols(); }
  Index hidden_dim() const { return W_i.value.rows(); }

  template <typename Self, typename F>
  static void visit_all(Self& s, std::string_view prefix, F& f) {
    f(join_name(prefix, "W_i"), s.W_i); f(join_name(prefix, "W_f"), s.W_f);
    f(join_name(prefix, "W_o"), s.W_o); f(join_name(prefix, "W_g"), s.W_g);
    f(join_name(prefix, "U_i"), s.U_i); f(join_name(prefix, "U_f"), s.U_f);
    f(join_name(prefix, "U_o"), s.U_o); f(join_name(prefix, "U_g"), s.U_g);
    f(join_name(prefix, "b_i"), s.b_i); f(join_name(prefix, "b_f"), s.b_f);
    f(join_name(prefix, "b_o"), s.b_o); f(join_name(prefix, "b_g"), s.b_g);
  }
  template <typename F>
  void visit(std::string_view prefix, F&& f) { visit_all(*this, prefix, f); }
  template <typename F>
  void visit(std::string_view prefix, F&& f) const { visit_all(*this, prefix, f); }
};

/// LstmParams bound to one tape, so each parameter is a single leaf however
/// many steps use it.
struct LstmCell {
  Var W_i, W_f, W_o, W_g, U_i, U_f, U_o, U_g, b_i, b_f, b_o, b_g;

  LstmCell(Tape& tape, LstmParams& p)
      : W_i(tape.param(p.W_i)), W_f(tape.param(p.W_f)), W_o(tape.param(p.W_o)), W_g(tape.param(p.W_g)),
        U_i(tape.param(p.U_i)), U_f(tape.param(p.U_f)), U_o(tape.param(p.U_o)), U_g(tape.param(p.U_g)),
        b_i(tape.param(p.b_i)), b_f(tape.param(p.b_f)), b_o(tape.param(p.b_o)), b_g(tape.param(p.b_g)) {}

  /// i, f, o = sigmoid(.), g = tanh(.), c' = f*c + i*g, h' = o*tanh(c').
  std::pair<Var, Var> step(Tape& t, Var x, Var h, Var c) const {
    auto gate = [&](Var W, Var U, Var b) { return t.add_bias(t.add(t.matmul(W, x), t.matmul(U, h)), b); };
    const Var i = t.sigmoid(gate(W_i, U_i, b_i));
    const Var f = t.sigmoid(gate(W_f, U_f, b_f));
    const Var o = t.sigmoid(gate(W_o, U_o, b_o));
    const Var g = t.tanh(gate(W_g, U_g, b_g));
    const Var c2 = t.add(t.hadamard(f, c), t.hadamard(i, g));
    const Var h2 = t.hadamard(o, t.tanh(c2));
    return {h2, c2};
  }
};

inline std::pair<Vector, Vector> lstm_step(LstmParams& params, const Vector& x, const Vector& h, const Vector& c) {
  const Index H = params.hidden_dim();
  if (x.size() != params.input_dim() || h.size() != H || c.size() != H)
    throw Error(ErrorKind::DimensionMismatch, "lstm_step input dims do not match the cell");
  Tape tape;
  LstmCell cell(tape, params);
  auto [h2, c2] = cell.step(tape, tape.constant(x), tape.constant(h), tape.constant(c));
  return {tape.value(h2), tape.value(c2)};
}

/// Bidirectional encoding of a D x T sequence into a 2H x T matrix: rows
/// [0, H) are forward states, rows [H, 2H) backward states, aligned by
/// position.
inline Var bilstm_encode(Tape& tape, LstmParams& fwd, LstmParams& bwd, Var seq) {
  const Index T = tape.value(seq).cols();
  if (T == 0) throw Error(ErrorKind::EmptySequence, "bilstm_encode on an empty sequence");
  LstmCell f(tape, fwd), b(tape, bwd);
  const Var zf = tape.constant(Matrix::Zero(fwd.hidden_dim(), 1));
  const Var zb = tape.constant(Matrix::Zero(bwd.hidden_dim(), 1));

  std::vector<Var> cols(static_cast<std::size_t>(T));
  for (Index t = 0; t < T; ++t) cols[static_cast<std::size_t>(t)] = tape.column(seq, t);

  std::vector<Var> hf(cols.size()), hb(cols.size());
  Var h = zf, c = zf;
  for (std::size_t t = 0; t < cols.size(); ++t) {
    std::tie(h, c) = f.step(tape, cols[t], h, c);
    hf[t] = h;
  }
  h = zb;
  c = zb;
  for (std::size_t t = cols.size(); t-- > 0;) {
    std::tie(h, c) = b.step(tape, cols[t], h, c);
    hb[t] = h;
  }
  std::vector<Var> out(cols.size());
  for (std::size_t t = 0; t < cols.size(); ++t) out[t] = tape.vstack(hf[t], hb[t]);
  return tape.hstack(out);
}

inline std::vector<Vector> bilstm_encode(LstmParams& fwd, LstmParams& bwd, const std::vector<Vector>& seq) {
  if (seq.empty()) throw Error(ErrorKind::EmptySequence, "bilstm_encode on an empty sequence");
  Matrix X(seq.front().size(), static_cast<Index>(seq.size()));
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (seq[t].size() != X.rows()) throw Error(ErrorKind::DimensionMismatch, "ragged sequence");
    X.col(static_cast<Index>(t)) = seq[t];
  }
  Tape tape;
  const Matrix& out = tape.value(bilstm_encode(tape, fwd, bwd, tape.constant(X)));
  std::vector<Vector> res;
  for (Index t = 0; t < out.cols(); ++t) res.emplace_back(out.col(t));
  return res;
}

/// Token scorer: input -> 64 tanh -> 32 tanh -> scalar.
struct AttentionNet {
  static constexpr Index kHidden1 = 64;
  static constexpr Index kHidden2 = 32;

  Dense hidden1;
  Dense hidden2;
  Dense head;

  static AttentionNet init(Index input_dim, Rng& rng) {
    return {Dense::init(input_dim, kHidden1, rng), Dense::init(kHidden1, kHidden2, rng), Dense::init(kHidden2, 1, rng)};
  }
  static AttentionNet zeros(Index input_dim) {
    return {Dense::zeros(input_dim, kHidden1), Dense::zeros(kHidden1, kHidden2), Dense::zeros(kHidden2, 1)};
  }

  Index input_dim() const { return hidden1.in_dim(); }

  /// 32 x T hidden representation of a D x T sequence.
  Var features(Tape& tape, Var seq) {
    return tape.tanh(hidden2.forward(tape, tape.tanh(hidden1.forward(tape, seq))));
  }

  /// 1 x T scores.
  Var scores(Tape& tape, Var seq) { return head.forward(tape, features(tape, seq)); }

  template <typename F>
  void visit(std::string_view prefix, F&& f) {
    hidden1.visit(join_name(prefix, "hidden1"), f);
    hidden2.visit(join_name(prefix, "hidden2"), f);
    head.visit(join_name(prefix, "head"), f);
  }
  template <typename F>
  void visit(std::string_view prefix, F&& f) const {
    hidden1.visit(join_name(prefix, "hidden1"), f);
    hidden2.visit(join_name(prefix, "hidden2"), f);
    head.visit(join_name(prefix, "head"), f);
  }
};

struct Attended {
  Var weights;   // T x 1, on the simplex
  Var weighted;  // D x T, column t = T * w_t * x_t
};

/// Softmax over per-token scores; each token is rescaled by T * w_t so that
/// uniform attention leaves the sequence unchanged.
inline Attended attention_apply(Tape& tape, AttentionNet& att, Var seq) {
  const Index T = tape.value(seq).cols();
  if (T == 0) throw Error(ErrorKind::EmptySequence, "attention over an empty sequence");
  const Var w = tape.softmax_cols(tape.transpose(att.scores(tape, seq)));
  return {w, tape.scale_cols(seq, tape.scale(w, static_cast<double>(T)))};
}

inline std::pair<Vector, std::vector<Vector>> attention_apply(AttentionNet& att, const std::vector<Vector>& seq) {
  if (seq.empty()) throw Error(ErrorKind::EmptySequence, "attention over an empty sequence");
  Matrix X(seq.front().size(), static_cast<Index>(seq.size()));
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (seq[t].size() != X.rows()) throw Error(ErrorKind::DimensionMismatch, "ragged sequence");
    X.col(static_cast<Index>(t)) = seq[t];
  }
  Tape tape;
  auto res = attention_apply(tape, att, tape.constant(X));
  std::vector<Vector> out;
  for (Index t = 0; t < X.cols(); ++t) out.emplace_back(tape.value(res.weighted).col(t));
  return {tape.value(res.weights).col(0), std::move(out)};
}

/// Single-head scaled dot-product self attention over the scorer's 32-d
/// features (queries = keys), values = inputs, plus a residual connection:
/// out[:, t] = x_t + sum_s softmax_s(q_t . q_s / sqrt(32)) x_s.
inline Var self_attention_apply(Tape& tape, AttentionNet& att, Var seq) {
  if (tape.value(seq).cols() == 0) throw Error(ErrorKind::EmptySequence, "attention over an empty sequence");
  const Var q = att.features(tape, seq);
  const Var scores = tape.scale(tape.matmul(tape.transpose(q), q), 1.0 / std::sqrt(static_cast<double>(AttentionNet::kHidden2)));
  const Var probs = tape.softmax_cols(scores);  // column t: distribution over s
  return tape.add(seq, tape.matmul(seq, probs));
}

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { Sgd, Adam };

/// SGD: p <- p - lr g. Adam: bias-corrected first/second moments with
/// beta1 = 0.9, beta2 = 0.999, eps = 1e-8. Moments are keyed by parameter name.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate) : kind_(kind), lr_(learning_rate) {}

  OptimizerKind kind() const { return kind_; }
  double learning_rate() const { return lr_; }
  std::uint64_t steps() const { return step_; }

  /// Starts a new optimisation step (advances Adam's bias-correction clock).
  void begin_step() { ++step_; }

  void update(const std::string& name, Matrix& param, const Matrix& grad) {
    if (param.rows() != grad.rows() || param.cols() != grad.cols())
      throw Error(ErrorKind::ShapeMismatch, "gradient shape differs from parameter " + name);
    if (kind_ == OptimizerKind::Sgd) {
      param -= lr_ * grad;
      return;
    }
    if (step_ == 0) step_ = 1;
    auto& [m, v] = moments_[name];
    if (m.size() == 0) {
      m = Matrix::Zero(param.rows(), param.cols());
      v = Matrix::Zero(param.rows(), param.cols());
    }
    if (m.rows() != param.rows() || m.cols() != param.cols())
      throw Error(ErrorKind::ShapeMismatch, "moment shape differs from parameter " + name);
    m = kBeta1 * m + (1.0 - kBeta1) * grad;
    v = kBeta2 * v + (1.0 - kBeta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_));
    param.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
  }

  /// One step over every parameter of a model exposing visit().
  template <typename Model>
  void step(Model& model) {
    begin_step();
    model.visit("", [this](const std::string& name, Parameter& p) { update(name, p.value, p.grad); });
  }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

 private:
  OptimizerKind kind_;
  double lr_;
  std::uint64_t step_ = 0;
  std::map<std::string, std::pair<Matrix, Matrix>> moments_;
};

template <typename Model>
void zero_grad(Model& model) {
  model.visit("", [](const std::string&, Parameter& p) { p.zero_grad(); });
}

template <typename Model>
std::size_t count_parameters(const Model& model) {
  std::size_t n = 0;
  model.visit("", [&n](const std::string&, const Parameter& p) { n += static_cast<std::size_t>(p.value.size()); });
  return n;
}

// ---------------------------------------------------------------------------
// Serialization: {name: {"shape": [rows, cols], "data": [row-major values]}}

template <typename Model>
nlohmann::json params_to_json(const Model& model) {
  nlohmann::json out = nlohmann::json::object();
  model.visit("", [&out](const std::string& name, const Parameter& p) {
    nlohmann::json data = nlohmann::json::array();
    for (Index r = 0; r < p.value.rows(); ++r)
      for (Index c = 0; c < p.value.cols(); ++c) data.push_back(p.value(r, c));
    out[name] = {{"shape", {p.value.rows(), p.value.cols()}}, {"data", std::move(data)}};
  });
  return out;
}

/// Fills an already-shaped model from params_to_json output.
template <typename Model>
void params_from_json(Model& model, const nlohmann::json& params) {
  model.visit("", [&params](const std::string& name, Parameter& p) {
    if (!params.contains(name)) throw Error(ErrorKind::CorruptFile, "missing parameter " + name);
    const auto& entry = params[name];
    if (!entry.contains("shape") || !entry.contains("data"))
      throw Error(ErrorKind::CorruptFile, "parameter " + name + " lacks shape/data");
    const auto rows = entry["shape"].at(0).get<Index>();
    const auto cols = entry["shape"].at(1).get<Index>();
    if (rows != p.value.rows() || cols != p.value.cols() || entry["data"].size() != static_cast<std::size_t>(rows * cols))
      throw Error(ErrorKind::CorruptFile, "parameter " + name + " has the wrong shape");
    std::size_t k = 0;
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) p.value(r, c) = entry["data"][k++].get<double>();
    p.zero_grad();
  });
}

}  // namespace misinfo::nn
