#include "normprior/nn/graph.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "normprior/error.hpp"

namespace normprior::nn {

namespace {

void require(bool ok, const char* op, const char* what) {
  if (!ok) throw ContractViolation(std::string(op) + ": " + what);
}

bool same_graph(Var a, Var b) { return a.graph && a.graph == b.graph; }

}  // namespace

const Matrix& Var::value() const { return graph->value(*this); }

Graph::Graph(const ParameterStore& params, bool record) : params_(params), record_(record) {}

const Graph::Node& Graph::node(Var v) const {
  require(v.graph == this && v.id >= 0 && v.id < static_cast<int>(nodes_.size()), "graph",
          "variable from another graph");
  return nodes_[static_cast<std::size_t>(v.id)];
}

Var Graph::push_node(Node n) {
  if (!n.needs_grad) n.backward = nullptr;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(std::size_t index) {
  require(index < params_.size(), "param", "index out of range");
  Node n;
  n.ref = &params_[index].value;
  n.needs_grad = record_ && params_[index].trainable;
  n.backward = [index](Graph& g, Var, const Matrix& grad) { g.sink().add_dense(index, grad); };
  return push_node(std::move(n));
}

Var Graph::input(Matrix value) {
  Node n;
  n.own = std::move(value);
  return push_node(std::move(n));
}

Var Graph::gather(std::size_t table, std::span<const int> ids) {
  require(table < params_.size(), "gather", "index out of range");
  const Matrix& t = params_[table].value;
  Matrix out = Matrix::Zero(static_cast<Index>(ids.size()), t.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    require(ids[r] >= -1 && ids[r] < t.rows(), "gather", "id out of range");
    if (ids[r] >= 0) out.row(static_cast<Index>(r)) = t.row(ids[r]);
  }
  Node n;
  n.own = std::move(out);
  n.needs_grad = record_ && params_[table].trainable;
  if (n.needs_grad) {
    n.backward = [table, ids = std::vector<int>(ids.begin(), ids.end())](Graph& g, Var,
                                                                          const Matrix& grad) {
      for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] >= 0) g.sink().add_row(table, ids[r], grad.row(static_cast<Index>(r)));
      }
    };
  }
  return push_node(std::move(n));
}

Var Graph::push(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
  Node n;
  n.own = std::move(value);
  for (Var v : inputs) n.needs_grad = n.needs_grad || (record_ && needs_grad(v));
  n.backward = std::move(fn);
  return push_node(std::move(n));
}

Var Graph::push(Matrix value, const std::vector<Var>& inputs, BackwardFn fn) {
  Node n;
  n.own = std::move(value);
  for (Var v : inputs) n.needs_grad = n.needs_grad || (record_ && needs_grad(v));
  n.backward = std::move(fn);
  return push_node(std::move(n));
}

void Graph::accumulate(Var v, const Matrix& g) {
  auto& n = nodes_[static_cast<std::size_t>(v.id)];
  if (!n.needs_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

void Graph::backward(Var loss, Gradients& sink, float scale) {
  require(record_, "backward", "graph was built without recording");
  require(value(loss).rows() == 1 && value(loss).cols() == 1, "backward", "loss must be 1x1");
  sink_ = &sink;
  accumulate(loss, Matrix::Constant(1, 1, scale));
  for (int i = loss.id; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, Var{this, i}, n.grad);
    n.grad.resize(0, 0);
    n.has_grad = false;
  }
  sink_ = nullptr;
}

Var matmul(Var a, Var b) {
  require(same_graph(a, b) && a.cols() == b.rows(), "matmul", "shape mismatch");
  Matrix out;
  out.noalias() = a.value() * b.value();
  return a.graph->push(std::move(out), {a, b}, [a, b](Graph& g, Var, const Matrix& grad) {
    if (g.needs_grad(a)) g.accumulate(a, grad * g.value(b).transpose());
    if (g.needs_grad(b)) g.accumulate(b, g.value(a).transpose() * grad);
  });
}

Var matmul_nt(Var a, Var b) {
  require(same_graph(a, b) && a.cols() == b.cols(), "matmul_nt", "shape mismatch");
  Matrix out;
  out.noalias() = a.value() * b.value().transpose();
  return a.graph->push(std::move(out), {a, b}, [a, b](Graph& g, Var, const Matrix& grad) {
    if (g.needs_grad(a)) g.accumulate(a, grad * g.value(b));
    if (g.needs_grad(b)) g.accumulate(b, grad.transpose() * g.value(a));
  });
}

Var add(Var a, Var b) {
  require(same_graph(a, b) && a.rows() == b.rows() && a.cols() == b.cols(), "add",
          "shape mismatch");
  Matrix out = a.value() + b.value();
  return a.graph->push(std::move(out), {a, b}, [a, b](Graph& g, Var, const Matrix& grad) {
    g.accumulate(a, grad);
    g.accumulate(b, grad);
  });
}

Var add_bias(Var a, Var bias) {
  require(same_graph(a, bias) && bias.rows() == 1 && bias.cols() == a.cols(), "add_bias",
          "shape mismatch");
  Matrix out = a.value().rowwise() + bias.value().row(0);
  return a.graph->push(std::move(out), {a, bias}, [a, bias](Graph& g, Var, const Matrix& grad) {
    g.accumulate(a, grad);
    if (g.needs_grad(bias)) g.accumulate(bias, grad.colwise().sum());
  });
}

Var mul(Var a, Var b) {
  require(same_graph(a, b) && a.rows() == b.rows() && a.cols() == b.cols(), "mul",
          "shape mismatch");
  Matrix out = a.value().cwiseProduct(b.value());
  return a.graph->push(std::move(out), {a, b}, [a, b](Graph& g, Var, const Matrix& grad) {
    if (g.needs_grad(a)) g.accumulate(a, grad.cwiseProduct(g.value(b)));
    if (g.needs_grad(b)) g.accumulate(b, grad.cwiseProduct(g.value(a)));
  });
}

Var scale(Var a, float s) {
  Matrix out = a.value() * s;
  return a.graph->push(std::move(out), {a},
                       [a, s](Graph& g, Var, const Matrix& grad) { g.accumulate(a, grad * s); });
}

Var relu(Var a) {
  Matrix out = a.value().cwiseMax(0.0f);
  return a.graph->push(std::move(out), {a}, [a](Graph& g, Var, const Matrix& grad) {
    const Matrix& x = g.value(a);
    g.accumulate(a, (x.array() > 0.0f).select(grad.array(), 0.0f).matrix());
  });
}

Var tanh(Var a) {
  Matrix out = a.value().array().tanh();
  return a.graph->push(std::move(out), {a}, [a](Graph& g, Var self, const Matrix& grad) {
    const auto y = g.value(self).array();
    g.accumulate(a, (grad.array() * (1.0f - y * y)).matrix());
  });
}

Var sigmoid(Var a) {
  Matrix out = (1.0f + (-a.value().array()).exp()).inverse();
  return a.graph->push(std::move(out), {a}, [a](Graph& g, Var self, const Matrix& grad) {
    const auto y = g.value(self).array();
    g.accumulate(a, (grad.array() * y * (1.0f - y)).matrix());
  });
}

Var gelu(Var a) {
  constexpr float kInvSqrt2 = 0.70710678118654752f;
  constexpr float kInvSqrt2Pi = 0.39894228040143268f;
  Matrix out = a.value().unaryExpr(
      [](float x) { return 0.5f * x * (1.0f + std::erf(x * kInvSqrt2)); });
  return a.graph->push(std::move(out), {a}, [a](Graph& g, Var, const Matrix& grad) {
    Matrix d = g.value(a).unaryExpr([](float x) {
      return 0.5f * (1.0f + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5f * x * x);
    });
    g.accumulate(a, d.cwiseProduct(grad));
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols", "no inputs");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (Var p : parts) {
    require(same_graph(p, parts[0]) && p.rows() == rows, "concat_cols", "shape mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (Var p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts[0].graph->push(std::move(out), parts, [parts](Graph& g, Var, const Matrix& grad) {
    Index off = 0;
    for (Var p : parts) {
      const Index c = g.value(p).cols();
      if (g.needs_grad(p)) g.accumulate(p, grad.middleCols(off, c));
      off += c;
    }
  });
}

Var slice_rows(Var a, Index start, Index n) {
  require(start >= 0 && n >= 0 && start + n <= a.rows(), "slice_rows", "range out of bounds");
  Matrix out = a.value().middleRows(start, n);
  return a.graph->push(std::move(out), {a}, [a, start, n](Graph& g, Var, const Matrix& grad) {
    Matrix d = Matrix::Zero(g.value(a).rows(), g.value(a).cols());
    d.middleRows(start, n) = grad;
    g.accumulate(a, d);
  });
}

Var slice_cols(Var a, Index start, Index n) {
  require(start >= 0 && n >= 0 && start + n <= a.cols(), "slice_cols", "range out of bounds");
  Matrix out = a.value().middleCols(start, n);
  return a.graph->push(std::move(out), {a}, [a, start, n](Graph& g, Var, const Matrix& grad) {
    Matrix d = Matrix::Zero(g.value(a).rows(), g.value(a).cols());
    d.middleCols(start, n) = grad;
    g.accumulate(a, d);
  });
}

Var sum_rows(Var a) {
  Matrix out = a.value().colwise().sum();
  return a.graph->push(std::move(out), {a}, [a](Graph& g, Var, const Matrix& grad) {
    g.accumulate(a, grad.replicate(g.value(a).rows(), 1));
  });
}

Var max_over_rows(Var a) {
  require(a.rows() > 0, "max_over_rows", "empty input");
  const Matrix& x = a.value();
  Matrix out(1, x.cols());
  std::vector<Index> arg(static_cast<std::size_t>(x.cols()));
  for (Index c = 0; c < x.cols(); ++c) {
    Index best = 0;
    for (Index r = 1; r < x.rows(); ++r) {
      if (x(r, c) > x(best, c)) best = r;
    }
    arg[static_cast<std::size_t>(c)] = best;
    out(0, c) = x(best, c);
  }
  return a.graph->push(std::move(out), {a}, [a, arg](Graph& g, Var, const Matrix& grad) {
    Matrix d = Matrix::Zero(g.value(a).rows(), g.value(a).cols());
    for (Index c = 0; c < d.cols(); ++c) d(arg[static_cast<std::size_t>(c)], c) = grad(0, c);
    g.accumulate(a, d);
  });
}

Var im2col3(Var a) {
  const Matrix& x = a.value();
  const Index t = x.rows();
  const Index c = x.cols();
  Matrix out = Matrix::Zero(t, 3 * c);
  if (t > 1) out.block(1, 0, t - 1, c) = x.topRows(t - 1);
  out.middleCols(c, c) = x;
  if (t > 1) out.block(0, 2 * c, t - 1, c) = x.bottomRows(t - 1);
  return a.graph->push(std::move(out), {a}, [a](Graph& g, Var, const Matrix& grad) {
    const Index t = grad.rows();
    const Index c = grad.cols() / 3;
    Matrix d = grad.middleCols(c, c);
    if (t > 1) {
      d.topRows(t - 1) += grad.block(1, 0, t - 1, c);
      d.bottomRows(t - 1) += grad.block(0, 2 * c, t - 1, c);
    }
    g.accumulate(a, d);
  });
}

Var max_pool_half(Var a) {
  require(a.rows() > 0, "max_pool_half", "empty input");
  const Matrix& x = a.value();
  const Index t = x.rows();
  const Index out_rows = (t - 1) / 2 + 1;
  Matrix out(out_rows, x.cols());
  std::vector<Index> arg(static_cast<std::size_t>(out_rows * x.cols()));
  for (Index j = 0; j < out_rows; ++j) {
    const Index lo = std::max<Index>(0, 2 * j - 1);
    const Index hi = std::min<Index>(t - 1, 2 * j + 1);
    for (Index c = 0; c < x.cols(); ++c) {
      Index best = lo;
      for (Index r = lo + 1; r <= hi; ++r) {
        if (x(r, c) > x(best, c)) best = r;
      }
      arg[static_cast<std::size_t>(j * x.cols() + c)] = best;
      out(j, c) = x(best, c);
    }
  }
  return a.graph->push(std::move(out), {a}, [a, arg](Graph& g, Var, const Matrix& grad) {
    Matrix d = Matrix::Zero(g.value(a).rows(), g.value(a).cols());
    for (Index j = 0; j < grad.rows(); ++j) {
      for (Index c = 0; c < grad.cols(); ++c) {
        d(arg[static_cast<std::size_t>(j * grad.cols() + c)], c) += grad(j, c);
      }
    }
    g.accumulate(a, d);
  });
}

Var softmax_rows(Var a) {
  Matrix out = a.value();
  for (Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp();
    row /= row.sum();
  }
  return a.graph->push(std::move(out), {a}, [a](Graph& g, Var self, const Matrix& grad) {
    const Matrix& y = g.value(self);
    Eigen::VectorXf dot = grad.cwiseProduct(y).rowwise().sum();
    Matrix d = y.cwiseProduct(grad - dot.replicate(1, y.cols()));
    g.accumulate(a, d);
  });
}

Var layer_norm(Var x, Var gamma, Var beta, float eps) {
  require(same_graph(x, gamma) && same_graph(x, beta) && gamma.rows() == 1 &&
              beta.rows() == 1 && gamma.cols() == x.cols() && beta.cols() == x.cols(),
          "layer_norm", "shape mismatch");
  const Matrix& in = x.value();
  const Index d = in.cols();
  auto xhat = std::make_shared<Matrix>(in.rows(), d);
  auto inv_std = std::make_shared<Eigen::VectorXf>(in.rows());
  for (Index r = 0; r < in.rows(); ++r) {
    const float mean = in.row(r).mean();
    const float var = (in.row(r).array() - mean).square().mean();
    (*inv_std)(r) = 1.0f / std::sqrt(var + eps);
    xhat->row(r) = (in.row(r).array() - mean) * (*inv_std)(r);
  }
  Matrix out = (xhat->array().rowwise() * gamma.value().row(0).array()).rowwise() +
               beta.value().row(0).array();
  return x.graph->push(std::move(out), {x, gamma, beta},
                       [x, gamma, beta, xhat, inv_std](Graph& g, Var, const Matrix& grad) {
    if (g.needs_grad(gamma)) g.accumulate(gamma, grad.cwiseProduct(*xhat).colwise().sum());
    if (g.needs_grad(beta)) g.accumulate(beta, grad.colwise().sum());
    if (!g.needs_grad(x)) return;
    Matrix dxhat = grad.array().rowwise() * g.value(gamma).row(0).array();
    Matrix dx(dxhat.rows(), dxhat.cols());
    for (Index r = 0; r < dxhat.rows(); ++r) {
      const float m1 = dxhat.row(r).mean();
      const float m2 = dxhat.row(r).cwiseProduct(xhat->row(r)).mean();
      dx.row(r) = (dxhat.row(r).array() - m1 - xhat->row(r).array() * m2) * (*inv_std)(r);
    }
    g.accumulate(x, dx);
  });
}

namespace {

struct LstmCache {
  Matrix gates;  // T x 4H after activation: i, f, g, o
  Matrix cells;  // T x H
};

}  // namespace

Var lstm(Var x, Var w_ih, Var w_hh, Var bias, bool reverse) {
  const Index h = w_hh.rows();
  require(same_graph(x, w_ih) && same_graph(x, w_hh) && same_graph(x, bias), "lstm",
          "mixed graphs");
  require(w_ih.rows() == x.cols() && w_ih.cols() == 4 * h && w_hh.cols() == 4 * h &&
              bias.rows() == 1 && bias.cols() == 4 * h,
          "lstm", "shape mismatch");
  const Index t_len = x.rows();
  Matrix z;
  z.noalias() = x.value() * w_ih.value();
  z.rowwise() += bias.value().row(0);

  auto cache = std::make_shared<LstmCache>();
  cache->gates.resize(t_len, 4 * h);
  cache->cells.resize(t_len, h);
  Matrix out(t_len, h);
  RowVector h_prev = RowVector::Zero(h);
  RowVector c_prev = RowVector::Zero(h);
  const Matrix& u = w_hh.value();
  for (Index k = 0; k < t_len; ++k) {
    const Index t = reverse ? t_len - 1 - k : k;
    RowVector zt = z.row(t);
    zt.noalias() += h_prev * u;
    auto ga = cache->gates.row(t);
    ga.segment(0, h) = (1.0f + (-zt.segment(0, h).array()).exp()).inverse();
    ga.segment(h, h) = (1.0f + (-zt.segment(h, h).array()).exp()).inverse();
    ga.segment(2 * h, h) = zt.segment(2 * h, h).array().tanh();
    ga.segment(3 * h, h) = (1.0f + (-zt.segment(3 * h, h).array()).exp()).inverse();
    c_prev = ga.segment(h, h).cwiseProduct(c_prev) + ga.segment(0, h).cwiseProduct(ga.segment(2 * h, h));
    h_prev = ga.segment(3 * h, h).array() * c_prev.array().tanh();
    cache->cells.row(t) = c_prev;
    out.row(t) = h_prev;
  }

  return x.graph->push(
      std::move(out), {x, w_ih, w_hh, bias},
      [x, w_ih, w_hh, bias, reverse, cache](Graph& g, Var self, const Matrix& grad) {
        const Matrix& hs = g.value(self);
        const Matrix& u = g.value(w_hh);
        const Index t_len = hs.rows();
        const Index h = hs.cols();
        Matrix dz(t_len, 4 * h);
        Matrix du = Matrix::Zero(h, 4 * h);
        RowVector dh_next = RowVector::Zero(h);
        RowVector dc_next = RowVector::Zero(h);
        for (Index k = t_len - 1; k >= 0; --k) {
          const Index t = reverse ? t_len - 1 - k : k;
          const Index tp = reverse ? t + 1 : t - 1;
          const bool first = k == 0;
          const auto ga = cache->gates.row(t).array();
          const auto i = ga.segment(0, h);
          const auto f = ga.segment(h, h);
          const auto gg = ga.segment(2 * h, h);
          const auto o = ga.segment(3 * h, h);
          const RowVector tc = cache->cells.row(t).array().tanh();
          const RowVector dh = grad.row(t) + dh_next;
          const RowVector dc =
              dh.array() * o * (1.0f - tc.array().square()) + dc_next.array();
          auto dzt = dz.row(t).array();
          dzt.segment(0, h) = dc.array() * gg * i * (1.0f - i);
          if (first) {
            dzt.segment(h, h) = 0.0f;
          } else {
            dzt.segment(h, h) = dc.array() * cache->cells.row(tp).array() * f * (1.0f - f);
          }
          dzt.segment(2 * h, h) = dc.array() * i * (1.0f - gg.square());
          dzt.segment(3 * h, h) = dh.array() * tc.array() * o * (1.0f - o);
          dc_next = dc.array() * f;
          dh_next.noalias() = dz.row(t) * u.transpose();
          if (!first) du.noalias() += hs.row(tp).transpose() * dz.row(t);
        }
        if (g.needs_grad(x)) g.accumulate(x, dz * g.value(w_ih).transpose());
        if (g.needs_grad(w_ih)) g.accumulate(w_ih, g.value(x).transpose() * dz);
        if (g.needs_grad(w_hh)) g.accumulate(w_hh, du);
        if (g.needs_grad(bias)) g.accumulate(bias, dz.colwise().sum());
      });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  const Matrix& z = logits.value();
  require(static_cast<Index>(targets.size()) == z.rows() && z.rows() > 0, "cross_entropy",
          "one target per row required");
  auto probs = std::make_shared<Matrix>(z.rows(), z.cols());
  double total = 0;
  for (Index r = 0; r < z.rows(); ++r) {
    const int y = targets[static_cast<std::size_t>(r)];
    require(y >= 0 && y < z.cols(), "cross_entropy", "target out of range");
    const double m = z.row(r).maxCoeff();
    double s = 0;
    for (Index c = 0; c < z.cols(); ++c) s += std::exp(static_cast<double>(z(r, c)) - m);
    const double lse = m + std::log(s);
    total += lse - z(r, y);
    for (Index c = 0; c < z.cols(); ++c) {
      (*probs)(r, c) = static_cast<float>(std::exp(static_cast<double>(z(r, c)) - lse));
    }
  }
  Matrix out = Matrix::Constant(1, 1, static_cast<float>(total / static_cast<double>(z.rows())));
  std::vector<int> ys(targets.begin(), targets.end());
  return logits.graph->push(std::move(out), {logits},
                            [logits, probs, ys](Graph& g, Var, const Matrix& grad) {
    Matrix d = *probs;
    for (std::size_t r = 0; r < ys.size(); ++r) d(static_cast<Index>(r), ys[r]) -= 1.0f;
    d *= grad(0, 0) / static_cast<float>(ys.size());
    g.accumulate(logits, d);
  });
}

}  // namespace normprior::nn
