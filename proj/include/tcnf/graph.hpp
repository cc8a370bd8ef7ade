// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tcnf/tensor.hpp"

#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <vector>

namespace tcnf::diff {

/// Learnable array. The gradient accumulates across backward passes until
/// zeroed by the optimizer.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void zero_grad() { grad = Tensor(value.shape()); }
};

/// Owns parameters with stable addresses, in creation order.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter& create(std::string name, Shape shape);
  Parameter* find(const std::string& name);

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  std::size_t scalar_count() const;
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  std::deque<Parameter> params_;
};

enum class Op {
  Input,
  Param,
  MatMul,
  Add,
  AddBias,
  Sub,
  Mul,
  MulRow,
  Scale,
  Shift,
  Tanh,
  Sigmoid,
  Exp,
  Log,
  Square,
  Sum,
  Mean,
  RowSum,
  SliceCols,
  ConcatCols,
  Reshape,
  Conv1d,
  MeanTime,
  TimeStep,
  Dropout,
  LstmCell,
};

const char* op_name(Op op);

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
};

enum class Mode { Inference, Training };

/// Static attributes of a recorded op.
struct OpAttrs {
  double scalar = 0.0;
  std::size_t a = 0;
  std::size_t b = 0;
  Shape target;
};

/// Define-then-run reverse-mode graph.
///
/// Building an op only records it. forward_eval() computes the ancestors of
/// the root in creation order (which is a topological order) and caches every
/// intermediate. Leaf inputs and parameters are read at evaluation time, so a
/// graph can be re-evaluated after a parameter is perturbed. Dropout masks are
/// drawn once per node and reused on re-evaluation.
class Graph {
 public:
  explicit Graph(Mode mode = Mode::Inference, std::uint64_t seed = 0);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Tensor value);
  Var param(Parameter& p);
  void set_input(Var v, Tensor value);

  const Tensor& forward_eval(Var root);
  /// Like forward_eval but keeps values already computed in this graph.
  const Tensor& eval_pending(Var root);
  /// Propagates d(root)/d(node) to every ancestor and accumulates into the
  /// gradients of the parameters reached.
  void backward(Var root);

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;
  /// Records an op; used by the free op functions below.
  Var apply(Op op, const std::vector<Var>& parents, OpAttrs attrs = {});
  bool training() const noexcept { return mode_ == Mode::Training; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Op op = Op::Input;
    std::vector<std::size_t> parents;
    Tensor value;
    Tensor grad;
    Parameter* param = nullptr;
    double scalar = 0.0;
    std::size_t a = 0;
    std::size_t b = 0;
    Shape target;
    Tensor aux;
    Tensor aux2;
    bool mask_ready = false;
    bool evaluated = false;
  };

  Var add_node(Node node);
  void eval_node(Node& n);
  void backprop_node(Node& n);
  std::vector<char> ancestors(std::size_t root) const;

  Mode mode_;
  std::mt19937_64 rng_;
  std::vector<Node> nodes_;
};

// Ops. All operands must belong to the same graph.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
/// a[n,p] + bias[p], broadcast over rows.
Var add_bias(Var a, Var bias);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// a[n,p] ⊙ v[p], broadcast over rows.
Var mul_row(Var a, Var v);
Var scale(Var a, double c);
Var shift(Var a, double c);
Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var sum(Var a);
Var mean(Var a);
/// a[n,p] → [n], summing each row.
Var row_sum(Var a);
Var slice_cols(Var a, std::size_t start, std::size_t len);
Var concat_cols(const std::vector<Var>& parts);
Var reshape(Var a, Shape shape);
/// x[n,T,Ci] ∗ w[Co,K,Ci] + b[Co] → [n,T,Co]; cross-correlation with zero
/// "same" padding, (K-1)/2 on the left.
Var conv1d(Var x, Var w, Var b);
/// x[n,T,C] → [n,C], average over time.
Var mean_time(Var x);
/// x[n,T,C] → [n,C] at time index t.
Var time_step(Var x, std::size_t t);
/// Inverted dropout, active only when the graph is in training mode.
Var dropout(Var a, double rate);
/// One LSTM step. Gates ordered (input, forget, candidate, output).
/// x[n,I], h[n,H], c[n,H], wx[I,4H], wh[H,4H], b[4H] → [n,2H] = (h' | c').
Var lstm_cell(Var x, Var h, Var c, Var wx, Var wh, Var b);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator-(Var a) { return scale(a, -1.0); }

}  // namespace tcnf::diff
