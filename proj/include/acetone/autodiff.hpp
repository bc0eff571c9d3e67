#pragma once

// Minimal reverse-mode differentiation over dense row-major tensors.
//
// A Graph records every operation as a node holding its value and a
// backward closure. Nodes are appended in evaluation order, so reverse
// insertion order is a valid topological order for the backward sweep.
// Parameters live outside the graph; after backward() each parameter node
// adds its gradient into Parameter::grad.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace acetone::ad {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_numel(shape), fill) {}
  Tensor(Shape s, std::vector<T> values);

  std::size_t numel() const noexcept { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const noexcept { return shape.size(); }
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape) {}

  void zero_grad();
};

struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  Var constant(Tensor<T> value);
  Var param(Parameter<T>& p);

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  // Valid after backward(); empty for nodes that do not need gradients.
  const Tensor<T>& grad(Var v) const { return nodes_.at(v.id).grad; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // --- volumetric ops on (C, D, H, W) tensors ---
  // w: (Cout, Cin, k, k, k), b: (Cout).
  Var conv3d(Var x, Var w, Var b, int stride, int pad);
  // w: (Cin, Cout, k, k, k), b: (Cout).
  Var conv_transpose3d(Var x, Var w, Var b, int stride, int pad);

  // --- elementwise ---
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, T s);
  Var silu(Var x);
  Var gelu(Var x);
  // Clamp to [0,1]; gradient passes only where the input is inside.
  Var clamp_unit(Var x);
  // Forward value is q; the gradient is copied unchanged to e.
  Var straight_through(Var e, const Tensor<T>& q);

  // --- reductions to scalars (shape {1}) ---
  Var mse(Var a, const Tensor<T>& target);
  Var sum(Var a);

  // --- matrix ops on (rows, cols) tensors ---
  Var matmul(Var a, Var b);
  // x: (n, in), w: (out, in), b: (out) -> (n, out).
  Var linear(Var x, Var w, Var b);
  // table: (V, d) -> rows at the given indices, shape (indices, d).
  Var embedding(Var table, const std::vector<int>& indices);
  Var rows(Var x, int start, int count);
  Var concat_rows(Var a, Var b);
  Var layernorm(Var x, Var gamma, Var beta, T eps = T(1e-5));
  // qkv: (n, 3*width) laid out [q | k | v]; causal multi-head attention.
  Var causal_attention(Var qkv, int heads);
  Var log_softmax(Var x);
  // -mean over rows of x[row, targets[row]].
  Var nll(Var log_probs, const std::vector<int>& targets);

  // Seeds d(root) = 1 (root must be a single element).
  void backward(Var root);
  // Seeds d(root) = seed (same shape as root).
  void backward(Var root, const Tensor<T>& seed);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    Parameter<T>* param = nullptr;
    std::function<void(Graph&)> back;
  };

  Var push(Tensor<T> value, bool needs_grad);
  Node& node(Var v) { return nodes_.at(v.id); }
  Tensor<T>& grad_buffer(Var v);

  std::vector<Node> nodes_;
};

// Adam with decoupled bookkeeping per parameter, in registration order.
template <typename T>
class Adam {
 public:
  struct Options {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  Adam(std::vector<Parameter<T>*> params, Options options);

  void zero_grad();
  // Descends on the accumulated gradients.
  void step();

  long steps() const noexcept { return t_; }
  const Options& options() const noexcept { return options_; }
  void set_lr(double lr) { options_.lr = lr; }

  // First and second moments in parameter order, for checkpointing.
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  void set_steps(long t) { t_ = t; }

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  Options options_;
  long t_ = 0;
};

// Fills a tensor with U(-bound, bound) draws from a seeded stream.
template <typename T>
void uniform_init(Tensor<T>& t, double bound, std::uint64_t seed);

extern template struct Tensor<float>;
extern template struct Tensor<double>;
extern template struct Parameter<float>;
extern template struct Parameter<double>;
extern template class Graph<float>;
extern template class Graph<double>;
extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace acetone::ad
