// SPDX-License-Identifier: Apache-2.0
#include "tcnf/graph.hpp"

#include "tcnf/error.hpp"

#include <cmath>
#include <numeric>
#include <utility>

namespace tcnf::diff {

// ---------------------------------------------------------------------------
// ParameterStore
// ---------------------------------------------------------------------------

Parameter& ParameterStore::create(std::string name, Shape shape) {
  Parameter p;
  p.name = std::move(name);
  p.value = Tensor(shape);
  p.grad = Tensor(shape);
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::vector<Tensor> ParameterStore::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

void ParameterStore::restore(const std::vector<Tensor>& values) {
  if (values.size() != params_.size()) throw ShapeError("parameter snapshot size mismatch");
  std::size_t i = 0;
  for (auto& p : params_) {
    if (!values[i].same_shape(p.value)) {
      throw ShapeError("parameter " + p.name + ": snapshot shape " + shape_str(values[i].shape()) +
                       " vs " + shape_str(p.value.shape()));
    }
    p.value = values[i++];
  }
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Param: return "param";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::AddBias: return "add_bias";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::MulRow: return "mul_row";
    case Op::Scale: return "scale";
    case Op::Shift: return "shift";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Square: return "square";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::RowSum: return "row_sum";
    case Op::SliceCols: return "slice_cols";
    case Op::ConcatCols: return "concat_cols";
    case Op::Reshape: return "reshape";
    case Op::Conv1d: return "conv1d";
    case Op::MeanTime: return "mean_time";
    case Op::TimeStep: return "time_step";
    case Op::Dropout: return "dropout";
    case Op::LstmCell: return "lstm_cell";
  }
  return "?";
}

const Tensor& Var::value() const { return graph->value(*this); }
const Tensor& Var::grad() const { return graph->grad(*this); }

Graph::Graph(Mode mode, std::uint64_t seed) : mode_(mode), rng_(seed) {}

Var Graph::add_node(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Graph::input(Tensor value) {
  Node n;
  n.op = Op::Input;
  n.value = std::move(value);
  n.evaluated = true;
  return add_node(std::move(n));
}

Var Graph::param(Parameter& p) {
  Node n;
  n.op = Op::Param;
  n.param = &p;
  return add_node(std::move(n));
}

void Graph::set_input(Var v, Tensor value) {
  Node& n = nodes_.at(v.id);
  if (n.op != Op::Input) throw GraphError("set_input on non-input node");
  n.value = std::move(value);
  for (auto& m : nodes_) {
    if (m.op != Op::Input) m.evaluated = false;
  }
}

Var Graph::apply(Op op, const std::vector<Var>& parents, OpAttrs attrs) {
  Node n;
  n.op = op;
  for (const Var& p : parents) {
    if (p.graph != this) throw GraphError(std::string(op_name(op)) + ": operand from another graph");
    n.parents.push_back(p.id);
  }
  n.scalar = attrs.scalar;
  n.a = attrs.a;
  n.b = attrs.b;
  n.target = std::move(attrs.target);
  return add_node(std::move(n));
}

const Tensor& Graph::value(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (!n.evaluated) throw GraphError(std::string("value of unevaluated ") + op_name(n.op) + " node");
  return n.value;
}

const Tensor& Graph::grad(Var v) const { return nodes_.at(v.id).grad; }

std::vector<char> Graph::ancestors(std::size_t root) const {
  std::vector<char> mark(root + 1, 0);
  mark[root] = 1;
  for (std::size_t i = root + 1; i-- > 0;) {
    if (!mark[i]) continue;
    for (std::size_t p : nodes_[i].parents) mark[p] = 1;
  }
  return mark;
}

const Tensor& Graph::forward_eval(Var root) {
  if (root.graph != this || root.id >= nodes_.size()) throw GraphError("forward_eval: foreign or invalid root");
  const auto mark = ancestors(root.id);
  for (std::size_t i = 0; i <= root.id; ++i) {
    if (!mark[i]) continue;
    Node& n = nodes_[i];
    if (n.op == Op::Input) continue;
    eval_node(n);
    n.evaluated = true;
  }
  return nodes_[root.id].value;
}

const Tensor& Graph::eval_pending(Var root) {
  if (root.graph != this || root.id >= nodes_.size()) throw GraphError("eval_pending: foreign or invalid root");
  const auto mark = ancestors(root.id);
  for (std::size_t i = 0; i <= root.id; ++i) {
    Node& n = nodes_[i];
    if (!mark[i] || n.op == Op::Input || n.evaluated) continue;
    eval_node(n);
    n.evaluated = true;
  }
  return nodes_[root.id].value;
}

void Graph::backward(Var root) {
  if (root.graph != this || root.id >= nodes_.size()) throw GraphError("backward: foreign or invalid root");
  Node& r = nodes_[root.id];
  if (!r.evaluated) throw GraphError("backward called before forward_eval");
  if (r.value.size() != 1) throw GraphError("backward requires a scalar root, got shape " + shape_str(r.value.shape()));
  const auto mark = ancestors(root.id);
  for (std::size_t i = 0; i <= root.id; ++i) {
    if (!mark[i]) continue;
    if (!nodes_[i].evaluated) throw GraphError("backward called before forward_eval");
    nodes_[i].grad = Tensor(nodes_[i].value.shape());
  }
  r.grad.fill(1.0);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    if (!mark[i]) continue;
    backprop_node(nodes_[i]);
  }
}

namespace {

[[noreturn]] void shape_fail(Op op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

[[noreturn]] void shape_fail(Op op, const Tensor& a, const std::string& what) {
  throw ShapeError(std::string(op_name(op)) + ": operand shape " + shape_str(a.shape()) + " " + what);
}

void require_rank(Op op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) shape_fail(op, a, "is not rank " + std::to_string(rank));
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void Graph::eval_node(Node& n) {
  auto in = [&](std::size_t i) -> const Tensor& { return nodes_[n.parents[i]].value; };
  switch (n.op) {
    case Op::Input:
      break;
    case Op::Param:
      n.value = n.param->value;
      break;
    case Op::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_fail(n.op, a, b);
      n.value = Tensor(Shape{a.dim(0), b.dim(1)});
      n.value.mat().noalias() = a.mat() * b.mat();
      break;
    }
    case Op::Add:
    case Op::Sub:
    case Op::Mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (!a.same_shape(b)) shape_fail(n.op, a, b);
      n.value = a;
      auto out = n.value.values();
      auto bv = b.values();
      if (n.op == Op::Add) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
      } else if (n.op == Op::Sub) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
      } else {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
      }
      break;
    }
    case Op::AddBias:
    case Op::MulRow: {
      const Tensor& a = in(0);
      const Tensor& v = in(1);
      if (a.rank() != 2 || v.rank() != 1 || v.dim(0) != a.dim(1)) shape_fail(n.op, a, v);
      n.value = a;
      auto m = n.value.mat();
      auto row = v.mat();
      if (n.op == Op::AddBias) {
        m.rowwise() += row.row(0);
      } else {
        m.array().rowwise() *= row.row(0).array();
      }
      break;
    }
    case Op::Scale:
    case Op::Shift: {
      n.value = in(0);
      for (double& x : n.value.values()) x = n.op == Op::Scale ? x * n.scalar : x + n.scalar;
      break;
    }
    case Op::Tanh:
    case Op::Sigmoid:
    case Op::Exp:
    case Op::Log:
    case Op::Square: {
      n.value = in(0);
      for (double& x : n.value.values()) {
        switch (n.op) {
          case Op::Tanh: x = std::tanh(x); break;
          case Op::Sigmoid: x = sigm(x); break;
          case Op::Exp: x = std::exp(x); break;
          case Op::Log: x = std::log(x); break;
          default: x = x * x; break;
        }
      }
      break;
    }
    case Op::Sum:
    case Op::Mean: {
      const Tensor& a = in(0);
      double s = std::accumulate(a.values().begin(), a.values().end(), 0.0);
      if (n.op == Op::Mean) {
        if (a.size() == 0) shape_fail(n.op, a, "is empty");
        s /= static_cast<double>(a.size());
      }
      n.value = Tensor::scalar(s);
      break;
    }
    case Op::RowSum: {
      const Tensor& a = in(0);
      require_rank(n.op, a, 2);
      n.value = Tensor(Shape{a.dim(0)});
      n.value.mat().row(0) = a.mat().rowwise().sum().transpose();
      break;
    }
    case Op::SliceCols: {
      const Tensor& a = in(0);
      require_rank(n.op, a, 2);
      if (n.a + n.b > a.dim(1)) shape_fail(n.op, a, "too narrow for columns [" + std::to_string(n.a) + "," +
                                                       std::to_string(n.a + n.b) + ")");
      n.value = Tensor(Shape{a.dim(0), n.b});
      n.value.mat() = a.mat().middleCols(static_cast<Eigen::Index>(n.a), static_cast<Eigen::Index>(n.b));
      break;
    }
    case Op::ConcatCols: {
      const Tensor& first = in(0);
      require_rank(n.op, first, 2);
      std::size_t width = 0;
      for (std::size_t i = 0; i < n.parents.size(); ++i) {
        const Tensor& p = in(i);
        if (p.rank() != 2 || p.dim(0) != first.dim(0)) shape_fail(n.op, first, p);
        width += p.dim(1);
      }
      n.value = Tensor(Shape{first.dim(0), width});
      auto m = n.value.mat();
      Eigen::Index col = 0;
      for (std::size_t i = 0; i < n.parents.size(); ++i) {
        const Tensor& p = in(i);
        const auto w = static_cast<Eigen::Index>(p.dim(1));
        if (w > 0) m.middleCols(col, w) = p.mat();
        col += w;
      }
      break;
    }
    case Op::Reshape: {
      const Tensor& a = in(0);
      if (shape_size(n.target) != a.size()) shape_fail(n.op, a, "cannot be reshaped to " + shape_str(n.target));
      n.value = Tensor(n.target, std::vector<double>(a.values().begin(), a.values().end()));
      break;
    }
    case Op::Conv1d: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const Tensor& b = in(2);
      if (x.rank() != 3 || w.rank() != 3 || w.dim(2) != x.dim(2)) shape_fail(n.op, x, w);
      if (b.rank() != 1 || b.dim(0) != w.dim(0)) shape_fail(n.op, w, b);
      const std::size_t batch = x.dim(0), steps = x.dim(1), cin = x.dim(2);
      const std::size_t cout = w.dim(0), k = w.dim(1);
      const std::size_t left = (k - 1) / 2;
      // im2col: rows (sample, t), columns (tap, channel).
      n.aux = Tensor(Shape{batch * steps, k * cin});
      for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t t = 0; t < steps; ++t) {
          double* row = n.aux.data() + (s * steps + t) * k * cin;
          for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(left);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(steps)) continue;
            const double* xin = x.data() + (s * steps + static_cast<std::size_t>(src)) * cin;
            std::copy(xin, xin + cin, row + j * cin);
          }
        }
      }
      const ConstMatrixMap wm(w.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(k * cin));
      n.value = Tensor(Shape{batch, steps, cout});
      MatrixMap out(n.value.data(), static_cast<Eigen::Index>(batch * steps), static_cast<Eigen::Index>(cout));
      out.noalias() = n.aux.mat() * wm.transpose();
      out.rowwise() += b.mat().row(0);
      break;
    }
    case Op::MeanTime: {
      const Tensor& x = in(0);
      require_rank(n.op, x, 3);
      const std::size_t batch = x.dim(0), steps = x.dim(1), ch = x.dim(2);
      if (steps == 0) shape_fail(n.op, x, "has no time steps");
      n.value = Tensor(Shape{batch, ch});
      for (std::size_t s = 0; s < batch; ++s)
        for (std::size_t t = 0; t < steps; ++t)
          for (std::size_t c = 0; c < ch; ++c) n.value(s, c) += x(s, t, c);
      for (double& v : n.value.values()) v /= static_cast<double>(steps);
      break;
    }
    case Op::TimeStep: {
      const Tensor& x = in(0);
      require_rank(n.op, x, 3);
      if (n.a >= x.dim(1)) shape_fail(n.op, x, "has no time index " + std::to_string(n.a));
      const std::size_t batch = x.dim(0), ch = x.dim(2);
      n.value = Tensor(Shape{batch, ch});
      for (std::size_t s = 0; s < batch; ++s)
        for (std::size_t c = 0; c < ch; ++c) n.value(s, c) = x(s, n.a, c);
      break;
    }
    case Op::Dropout: {
      const Tensor& a = in(0);
      n.value = a;
      if (!training() || n.scalar <= 0.0) break;
      if (!n.mask_ready || !n.aux.same_shape(a)) {
        n.aux = Tensor(a.shape());
        std::bernoulli_distribution keep(1.0 - n.scalar);
        const double inv = 1.0 / (1.0 - n.scalar);
        for (double& m : n.aux.values()) m = keep(rng_) ? inv : 0.0;
        n.mask_ready = true;
      }
      for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] *= n.aux[i];
      break;
    }
    case Op::LstmCell: {
      const Tensor& x = in(0);
      const Tensor& h = in(1);
      const Tensor& c = in(2);
      const Tensor& wx = in(3);
      const Tensor& wh = in(4);
      const Tensor& b = in(5);
      if (x.rank() != 2 || wx.rank() != 2 || wx.dim(0) != x.dim(1)) shape_fail(n.op, x, wx);
      const std::size_t batch = x.dim(0);
      const std::size_t hid = wx.dim(1) / 4;
      if (wx.dim(1) != 4 * hid) shape_fail(n.op, wx, "does not have 4H columns");
      if (h.rank() != 2 || h.dim(0) != batch || h.dim(1) != hid) shape_fail(n.op, x, h);
      if (!c.same_shape(h)) shape_fail(n.op, h, c);
      if (wh.rank() != 2 || wh.dim(0) != hid || wh.dim(1) != 4 * hid) shape_fail(n.op, h, wh);
      if (b.rank() != 1 || b.dim(0) != 4 * hid) shape_fail(n.op, wx, b);
      // aux: activated gates [n,4H]; aux2: tanh(c') [n,H]
      n.aux = Tensor(Shape{batch, 4 * hid});
      auto z = n.aux.mat();
      z.noalias() = x.mat() * wx.mat();
      z.noalias() += h.mat() * wh.mat();
      z.rowwise() += b.mat().row(0);
      n.aux2 = Tensor(Shape{batch, hid});
      n.value = Tensor(Shape{batch, 2 * hid});
      for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t j = 0; j < hid; ++j) {
          double& gi = n.aux(s, j);
          double& gf = n.aux(s, hid + j);
          double& gg = n.aux(s, 2 * hid + j);
          double& go = n.aux(s, 3 * hid + j);
          gi = sigm(gi);
          gf = sigm(gf);
          gg = std::tanh(gg);
          go = sigm(go);
          const double cn = gf * c(s, j) + gi * gg;
          const double tc = std::tanh(cn);
          n.aux2(s, j) = tc;
          n.value(s, j) = go * tc;
          n.value(s, hid + j) = cn;
        }
      }
      break;
    }
  }
}

void Graph::backprop_node(Node& n) {
  auto in = [&](std::size_t i) -> const Tensor& { return nodes_[n.parents[i]].value; };
  auto gin = [&](std::size_t i) -> Tensor& { return nodes_[n.parents[i]].grad; };
  const Tensor& g = n.grad;
  switch (n.op) {
    case Op::Input:
      break;
    case Op::Param: {
      Parameter& p = *n.param;
      if (!p.grad.same_shape(p.value)) p.grad = Tensor(p.value.shape());
      for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
      break;
    }
    case Op::MatMul:
      gin(0).mat().noalias() += g.mat() * in(1).mat().transpose();
      gin(1).mat().noalias() += in(0).mat().transpose() * g.mat();
      break;
    case Op::Add:
      gin(0).mat() += g.mat();
      gin(1).mat() += g.mat();
      break;
    case Op::Sub:
      gin(0).mat() += g.mat();
      gin(1).mat() -= g.mat();
      break;
    case Op::Mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Tensor& ga = gin(0);
      Tensor& gb = gin(1);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * b[i];
        gb[i] += g[i] * a[i];
      }
      break;
    }
    case Op::AddBias:
      gin(0).mat() += g.mat();
      gin(1).mat().row(0) += g.mat().colwise().sum();
      break;
    case Op::MulRow: {
      const Tensor& a = in(0);
      const Tensor& v = in(1);
      gin(0).mat().array() += g.mat().array().rowwise() * v.mat().row(0).array();
      gin(1).mat().row(0) += (g.mat().array() * a.mat().array()).colwise().sum().matrix();
      break;
    }
    case Op::Scale: {
      Tensor& ga = gin(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.scalar;
      break;
    }
    case Op::Shift: {
      Tensor& ga = gin(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      break;
    }
    case Op::Tanh:
    case Op::Sigmoid:
    case Op::Exp:
    case Op::Log:
    case Op::Square: {
      const Tensor& a = in(0);
      const Tensor& y = n.value;
      Tensor& ga = gin(0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        double d = 0.0;
        switch (n.op) {
          case Op::Tanh: d = 1.0 - y[i] * y[i]; break;
          case Op::Sigmoid: d = y[i] * (1.0 - y[i]); break;
          case Op::Exp: d = y[i]; break;
          case Op::Log: d = 1.0 / a[i]; break;
          default: d = 2.0 * a[i]; break;
        }
        ga[i] += g[i] * d;
      }
      break;
    }
    case Op::Sum:
    case Op::Mean: {
      Tensor& ga = gin(0);
      double d = g[0];
      if (n.op == Op::Mean) d /= static_cast<double>(ga.size());
      for (double& x : ga.values()) x += d;
      break;
    }
    case Op::RowSum:
      gin(0).mat().colwise() += g.mat().row(0).transpose();
      break;
    case Op::SliceCols:
      gin(0).mat().middleCols(static_cast<Eigen::Index>(n.a), static_cast<Eigen::Index>(n.b)) += g.mat();
      break;
    case Op::ConcatCols: {
      Eigen::Index col = 0;
      for (std::size_t i = 0; i < n.parents.size(); ++i) {
        Tensor& gp = gin(i);
        const auto w = static_cast<Eigen::Index>(gp.dim(1));
        if (w > 0) gp.mat() += g.mat().middleCols(col, w);
        col += w;
      }
      break;
    }
    case Op::Reshape: {
      Tensor& ga = gin(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      break;
    }
    case Op::Conv1d: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const std::size_t batch = x.dim(0), steps = x.dim(1), cin = x.dim(2);
      const std::size_t cout = w.dim(0), k = w.dim(1);
      const std::size_t left = (k - 1) / 2;
      const ConstMatrixMap gy(g.data(), static_cast<Eigen::Index>(batch * steps), static_cast<Eigen::Index>(cout));
      const ConstMatrixMap wm(w.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(k * cin));
      MatrixMap gw(gin(1).data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(k * cin));
      gw.noalias() += gy.transpose() * n.aux.mat();
      gin(2).mat().row(0) += gy.colwise().sum();
      RowMatrix gcols = gy * wm;
      Tensor& gx = gin(0);
      for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t t = 0; t < steps; ++t) {
          const double* row = gcols.data() + (s * steps + t) * k * cin;
          for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(left);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(steps)) continue;
            double* gxin = gx.data() + (s * steps + static_cast<std::size_t>(src)) * cin;
            for (std::size_t c = 0; c < cin; ++c) gxin[c] += row[j * cin + c];
          }
        }
      }
      break;
    }
    case Op::MeanTime: {
      Tensor& gx = gin(0);
      const std::size_t batch = gx.dim(0), steps = gx.dim(1), ch = gx.dim(2);
      const double inv = 1.0 / static_cast<double>(steps);
      for (std::size_t s = 0; s < batch; ++s)
        for (std::size_t t = 0; t < steps; ++t)
          for (std::size_t c = 0; c < ch; ++c) gx(s, t, c) += g(s, c) * inv;
      break;
    }
    case Op::TimeStep: {
      Tensor& gx = gin(0);
      const std::size_t batch = gx.dim(0), ch = gx.dim(2);
      for (std::size_t s = 0; s < batch; ++s)
        for (std::size_t c = 0; c < ch; ++c) gx(s, n.a, c) += g(s, c);
      break;
    }
    case Op::Dropout: {
      Tensor& ga = gin(0);
      const bool active = training() && n.scalar > 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += active ? g[i] * n.aux[i] : g[i];
      break;
    }
    case Op::LstmCell: {
      const Tensor& x = in(0);
      const Tensor& h = in(1);
      const Tensor& c = in(2);
      const Tensor& wx = in(3);
      const Tensor& wh = in(4);
      const std::size_t batch = x.dim(0);
      const std::size_t hid = wx.dim(1) / 4;
      Tensor dz(Shape{batch, 4 * hid});
      Tensor& gc = gin(2);
      for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t j = 0; j < hid; ++j) {
          const double gi = n.aux(s, j);
          const double gf = n.aux(s, hid + j);
          const double gg = n.aux(s, 2 * hid + j);
          const double go = n.aux(s, 3 * hid + j);
          const double tc = n.aux2(s, j);
          const double dh = g(s, j);
          const double dc = g(s, hid + j) + dh * go * (1.0 - tc * tc);
          dz(s, j) = dc * gg * gi * (1.0 - gi);
          dz(s, hid + j) = dc * c(s, j) * gf * (1.0 - gf);
          dz(s, 2 * hid + j) = dc * gi * (1.0 - gg * gg);
          dz(s, 3 * hid + j) = dh * tc * go * (1.0 - go);
          gc(s, j) += dc * gf;
        }
      }
      gin(0).mat().noalias() += dz.mat() * wx.mat().transpose();
      gin(1).mat().noalias() += dz.mat() * wh.mat().transpose();
      gin(3).mat().noalias() += x.mat().transpose() * dz.mat();
      gin(4).mat().noalias() += h.mat().transpose() * dz.mat();
      gin(5).mat().row(0) += dz.mat().colwise().sum();
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Op constructors
// ---------------------------------------------------------------------------

namespace {

OpAttrs scalar_attr(double c) {
  OpAttrs attrs;
  attrs.scalar = c;
  return attrs;
}

OpAttrs index_attrs(std::size_t a, std::size_t b) {
  OpAttrs attrs;
  attrs.a = a;
  attrs.b = b;
  return attrs;
}

OpAttrs shape_attr(Shape shape) {
  OpAttrs attrs;
  attrs.target = std::move(shape);
  return attrs;
}

}  // namespace

Var matmul(Var a, Var b) { return a.graph->apply(Op::MatMul, {a, b}); }
Var add(Var a, Var b) { return a.graph->apply(Op::Add, {a, b}); }
Var add_bias(Var a, Var bias) { return a.graph->apply(Op::AddBias, {a, bias}); }
Var sub(Var a, Var b) { return a.graph->apply(Op::Sub, {a, b}); }
Var mul(Var a, Var b) { return a.graph->apply(Op::Mul, {a, b}); }
Var mul_row(Var a, Var v) { return a.graph->apply(Op::MulRow, {a, v}); }
Var scale(Var a, double c) { return a.graph->apply(Op::Scale, {a}, scalar_attr(c)); }
Var shift(Var a, double c) { return a.graph->apply(Op::Shift, {a}, scalar_attr(c)); }
Var tanh(Var a) { return a.graph->apply(Op::Tanh, {a}); }
Var sigmoid(Var a) { return a.graph->apply(Op::Sigmoid, {a}); }
Var exp(Var a) { return a.graph->apply(Op::Exp, {a}); }
Var log(Var a) { return a.graph->apply(Op::Log, {a}); }
Var square(Var a) { return a.graph->apply(Op::Square, {a}); }
Var sum(Var a) { return a.graph->apply(Op::Sum, {a}); }
Var mean(Var a) { return a.graph->apply(Op::Mean, {a}); }
Var row_sum(Var a) { return a.graph->apply(Op::RowSum, {a}); }
Var slice_cols(Var a, std::size_t start, std::size_t len) {
  return a.graph->apply(Op::SliceCols, {a}, index_attrs(start, len));
}
Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  return parts.front().graph->apply(Op::ConcatCols, parts);
}
Var reshape(Var a, Shape shape) { return a.graph->apply(Op::Reshape, {a}, shape_attr(std::move(shape))); }
Var conv1d(Var x, Var w, Var b) { return x.graph->apply(Op::Conv1d, {x, w, b}); }
Var mean_time(Var x) { return x.graph->apply(Op::MeanTime, {x}); }
Var time_step(Var x, std::size_t t) { return x.graph->apply(Op::TimeStep, {x}, index_attrs(t, 0)); }
Var dropout(Var a, double rate) {
  if (rate < 0.0 || rate >= 1.0) throw ShapeError("dropout: rate " + std::to_string(rate) + " outside [0,1)");
  return a.graph->apply(Op::Dropout, {a}, scalar_attr(rate));
}
Var lstm_cell(Var x, Var h, Var c, Var wx, Var wh, Var b) {
  return x.graph->apply(Op::LstmCell, {x, h, c, wx, wh, b});
}

}  // namespace tcnf::diff
