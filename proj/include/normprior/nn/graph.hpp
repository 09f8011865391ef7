#pragma once

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "normprior/nn/tensor.hpp"

namespace normprior::nn {

class Graph;

struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
};

// Reverse-mode tape for a single example. Parameters are read, never
// written; backward() deposits their gradients into a Gradients sink.
class Graph {
 public:
  // Receives the node itself and its accumulated output gradient.
  using BackwardFn = std::function<void(Graph&, Var self, const Matrix& grad)>;

  // With record=false no backward closures are kept (inference).
  explicit Graph(const ParameterStore& params, bool record = true);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var param(std::size_t index);
  Var input(Matrix value);
  // Rows of a lookup table; id -1 yields a zero row.
  Var gather(std::size_t table, std::span<const int> ids);

  // Seeds d(loss) = scale for a 1x1 loss and runs the tape backwards.
  void backward(Var loss, Gradients& sink, float scale = 1.0f);

  const Matrix& value(Var v) const { return node(v).value(); }
  bool needs_grad(Var v) const { return node(v).needs_grad; }
  bool recording() const { return record_; }
  const ParameterStore& params() const { return params_; }

  // Op-building interface.
  Var push(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var push(Matrix value, const std::vector<Var>& inputs, BackwardFn fn);
  void accumulate(Var v, const Matrix& g);
  Gradients& sink() { return *sink_; }

 private:
  struct Node {
    Matrix own;
    const Matrix* ref = nullptr;
    bool needs_grad = false;
    bool has_grad = false;
    Matrix grad;
    BackwardFn backward;
    const Matrix& value() const { return ref ? *ref : own; }
  };
  const Node& node(Var v) const;
  Var push_node(Node n);

  const ParameterStore& params_;
  bool record_;
  std::deque<Node> nodes_;
  Gradients* sink_ = nullptr;
};

Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var add(Var a, Var b);
Var add_bias(Var a, Var bias);  // bias is 1 x cols, broadcast over rows
Var mul(Var a, Var b);
Var scale(Var a, float s);
Var relu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var gelu(Var a);  // erf form
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(Var a, Index start, Index n);
Var slice_cols(Var a, Index start, Index n);
Var sum_rows(Var a);       // 1 x cols
Var max_over_rows(Var a);  // 1 x cols
// Width-3 windows with zero padding: row t becomes [x(t-1), x(t), x(t+1)].
Var im2col3(Var a);
// Window 3, stride 2, padding 1 along rows.
Var max_pool_half(Var a);
Var softmax_rows(Var a);
Var layer_norm(Var x, Var gamma, Var beta, float eps);
// One LSTM direction over the rows of x. Gates are ordered i, f, g, o in the
// columns of w_ih (E x 4H), w_hh (H x 4H) and bias (1 x 4H). Row t of the
// result is the hidden state at position t; with reverse=true the sequence is
// consumed from the last row to the first.
Var lstm(Var x, Var w_ih, Var w_hh, Var bias, bool reverse);
// Mean negative log-likelihood over rows; 1 x 1.
Var cross_entropy(Var logits, std::span<const int> targets);

}  // namespace normprior::nn
