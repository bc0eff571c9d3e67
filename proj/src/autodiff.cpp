#include "acetone/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "acetone/error.hpp"
#include "acetone/random.hpp"

namespace acetone::ad {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<MatR<T>>;
template <typename T>
using CMap = Eigen::Map<const MatR<T>>;

template <typename T>
Map<T> as_mat(Tensor<T>& t, int rows, int cols) {
  return Map<T>(t.data.data(), rows, cols);
}
template <typename T>
CMap<T> as_mat(const Tensor<T>& t, int rows, int cols) {
  return CMap<T>(t.data.data(), rows, cols);
}

void check(bool ok, const std::string& what) {
  if (!ok) throw Error(Errc::dimension_mismatch, what);
}

struct Volume {
  int c, d, h, w;
};

int conv_out(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

// Sequential sum, independent of buffer alignment.
template <typename T>
T ordered_sum(const T* p, std::size_t n) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += p[i];
  return acc;
}

// cols[(c*k^3 + kd*k^2 + kh*k + kw), (od*Ho + oh)*Wo + ow] = x[c, od*s-p+kd, ...]
template <typename T>
void im2col(const T* x, Volume in, int k, int s, int p, Volume out, T* cols) {
  const std::size_t plane = static_cast<std::size_t>(out.d) * out.h * out.w;
  for (int c = 0; c < in.c; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * in.d * in.h * in.w;
    for (int kd = 0; kd < k; ++kd) {
      for (int kh = 0; kh < k; ++kh) {
        for (int kw = 0; kw < k; ++kw) {
          T* row = cols + ((static_cast<std::size_t>(c) * k + kd) * k * k + kh * k + kw) * plane;
          for (int od = 0; od < out.d; ++od) {
            const int id = od * s - p + kd;
            for (int oh = 0; oh < out.h; ++oh) {
              const int ih = oh * s - p + kh;
              T* dst = row + (static_cast<std::size_t>(od) * out.h + oh) * out.w;
              if (id < 0 || id >= in.d || ih < 0 || ih >= in.h) {
                std::fill(dst, dst + out.w, T(0));
                continue;
              }
              const T* src = xc + (static_cast<std::size_t>(id) * in.h + ih) * in.w;
              for (int ow = 0; ow < out.w; ++ow) {
                const int iw = ow * s - p + kw;
                dst[ow] = (iw >= 0 && iw < in.w) ? src[iw] : T(0);
              }
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-add columns back into x.
template <typename T>
void col2im(const T* cols, Volume in, int k, int s, int p, Volume out, T* x) {
  const std::size_t plane = static_cast<std::size_t>(out.d) * out.h * out.w;
  for (int c = 0; c < in.c; ++c) {
    T* xc = x + static_cast<std::size_t>(c) * in.d * in.h * in.w;
    for (int kd = 0; kd < k; ++kd) {
      for (int kh = 0; kh < k; ++kh) {
        for (int kw = 0; kw < k; ++kw) {
          const T* row =
              cols + ((static_cast<std::size_t>(c) * k + kd) * k * k + kh * k + kw) * plane;
          for (int od = 0; od < out.d; ++od) {
            const int id = od * s - p + kd;
            if (id < 0 || id >= in.d) continue;
            for (int oh = 0; oh < out.h; ++oh) {
              const int ih = oh * s - p + kh;
              if (ih < 0 || ih >= in.h) continue;
              const T* src = row + (static_cast<std::size_t>(od) * out.h + oh) * out.w;
              T* dst = xc + (static_cast<std::size_t>(id) * in.h + ih) * in.w;
              for (int ow = 0; ow < out.w; ++ow) {
                const int iw = ow * s - p + kw;
                if (iw >= 0 && iw < in.w) dst[iw] += src[ow];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw Error(Errc::dimension_mismatch, "negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ')';
  return out.str();
}

template <typename T>
Tensor<T>::Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
  check(data.size() == shape_numel(shape), "tensor data does not match shape " + shape_string(shape));
}

template <typename T>
void Parameter<T>::zero_grad() {
  if (grad.shape != value.shape) grad = Tensor<T>(value.shape);
  std::fill(grad.data.begin(), grad.data.end(), T(0));
}

template <typename T>
Var Graph<T>::push(Tensor<T> value, bool needs_grad) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Tensor<T>& Graph<T>::grad_buffer(Var v) {
  Node& n = node(v);
  if (n.grad.data.empty()) n.grad = Tensor<T>(n.value.shape);
  return n.grad;
}

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
  return push(std::move(value), false);
}

template <typename T>
Var Graph<T>::param(Parameter<T>& p) {
  Var v = push(p.value, true);
  node(v).param = &p;
  return v;
}

template <typename T>
Var Graph<T>::conv3d(Var x, Var w, Var b, int stride, int pad) {
  const Tensor<T>& X = value(x);
  const Tensor<T>& W = value(w);
  check(X.rank() == 4 && W.rank() == 5 && W.dim(1) == X.dim(0) && W.dim(2) == W.dim(3) &&
            W.dim(3) == W.dim(4),
        "conv3d shape mismatch: x" + shape_string(X.shape) + " w" + shape_string(W.shape));
  const int k = W.dim(2);
  const Volume in{X.dim(0), X.dim(1), X.dim(2), X.dim(3)};
  const Volume out{W.dim(0), conv_out(in.d, k, stride, pad), conv_out(in.h, k, stride, pad),
                   conv_out(in.w, k, stride, pad)};
  check(value(b).numel() == static_cast<std::size_t>(out.c), "conv3d bias size");
  const int ck = in.c * k * k * k;
  const int plane = out.d * out.h * out.w;
  std::vector<T> cols(static_cast<std::size_t>(ck) * plane);
  im2col(X.data.data(), in, k, stride, pad, out, cols.data());

  Tensor<T> y({out.c, out.d, out.h, out.w});
  auto Y = as_mat(y, out.c, plane);
  Y.noalias() = as_mat(W, out.c, ck) * CMap<T>(cols.data(), ck, plane);
  const Tensor<T>& B = value(b);
  for (int o = 0; o < out.c; ++o) Y.row(o).array() += B.data[o];

  const bool needs = requires_grad(x) || requires_grad(w) || requires_grad(b);
  Var o = push(std::move(y), needs);
  if (needs) {
    node(o).back = [=, cols = std::move(cols)](Graph& g) {
      const auto dY = as_mat(g.node(o).grad, out.c, plane);
      if (g.requires_grad(w)) {
        as_mat(g.grad_buffer(w), out.c, ck).noalias() +=
            dY * CMap<T>(cols.data(), ck, plane).transpose();
      }
      if (g.requires_grad(b)) {
        auto& db = g.grad_buffer(b);
        for (int c = 0; c < out.c; ++c) db.data[c] += ordered_sum(dY.row(c).data(), plane);
      }
      if (g.requires_grad(x)) {
        MatR<T> dcols = as_mat(g.value(w), out.c, ck).transpose() * dY;
        col2im(dcols.data(), in, k, stride, pad, out, g.grad_buffer(x).data.data());
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::conv_transpose3d(Var x, Var w, Var b, int stride, int pad) {
  const Tensor<T>& X = value(x);
  const Tensor<T>& W = value(w);
  check(X.rank() == 4 && W.rank() == 5 && W.dim(0) == X.dim(0) && W.dim(2) == W.dim(3) &&
            W.dim(3) == W.dim(4),
        "conv_transpose3d shape mismatch: x" + shape_string(X.shape) + " w" +
            shape_string(W.shape));
  const int k = W.dim(2);
  const int cin = X.dim(0);
  const int cout = W.dim(1);
  // grid: the input lattice; vol: the produced output volume.
  const Volume grid{cin, X.dim(1), X.dim(2), X.dim(3)};
  const Volume vol{cout, (grid.d - 1) * stride - 2 * pad + k, (grid.h - 1) * stride - 2 * pad + k,
                   (grid.w - 1) * stride - 2 * pad + k};
  check(value(b).numel() == static_cast<std::size_t>(cout), "conv_transpose3d bias size");
  const int ck = cout * k * k * k;
  const int plane = grid.d * grid.h * grid.w;
  const int vplane = vol.d * vol.h * vol.w;

  MatR<T> cols = as_mat(W, cin, ck).transpose() * as_mat(X, cin, plane);
  Tensor<T> y({vol.c, vol.d, vol.h, vol.w});
  col2im(cols.data(), vol, k, stride, pad, grid, y.data.data());
  const Tensor<T>& B = value(b);
  for (int c = 0; c < cout; ++c) {
    T* row = y.data.data() + static_cast<std::size_t>(c) * vplane;
    for (int i = 0; i < vplane; ++i) row[i] += B.data[c];
  }

  const bool needs = requires_grad(x) || requires_grad(w) || requires_grad(b);
  Var o = push(std::move(y), needs);
  if (needs) {
    node(o).back = [=](Graph& g) {
      const Tensor<T>& dy = g.node(o).grad;
      MatR<T> dcols(ck, plane);
      im2col(dy.data.data(), vol, k, stride, pad, grid, dcols.data());
      if (g.requires_grad(x)) {
        as_mat(g.grad_buffer(x), cin, plane).noalias() += as_mat(g.value(w), cin, ck) * dcols;
      }
      if (g.requires_grad(w)) {
        as_mat(g.grad_buffer(w), cin, ck).noalias() +=
            as_mat(g.value(x), cin, plane) * dcols.transpose();
      }
      if (g.requires_grad(b)) {
        auto& db = g.grad_buffer(b);
        for (int c = 0; c < cout; ++c) {
          db.data[c] += ordered_sum(dy.data.data() + static_cast<std::size_t>(c) * vplane, vplane);
        }
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  const Tensor<T>& A = value(a);
  const Tensor<T>& B = value(b);
  check(A.shape == B.shape, "add shape mismatch " + shape_string(A.shape) + " vs " +
                                shape_string(B.shape));
  Tensor<T> y = A;
  for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] += B.data[i];
  const bool needs = requires_grad(a) || requires_grad(b);
  Var o = push(std::move(y), needs);
  if (needs) {
    node(o).back = [=](Graph& g) {
      const auto& dy = g.node(o).grad.data;
      for (Var in : {a, b}) {
        if (!g.requires_grad(in)) continue;
        auto& d = g.grad_buffer(in).data;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::sub(Var a, Var b) {
  return add(a, scale(b, T(-1)));
}

template <typename T>
Var Graph<T>::scale(Var a, T s) {
  Tensor<T> y = value(a);
  for (auto& v : y.data) v *= s;
  const bool needs = requires_grad(a);
  Var o = push(std::move(y), needs);
  if (needs) {
    node(o).back = [=](Graph& g) {
      const auto& dy = g.node(o).grad.data;
      auto& d = g.grad_buffer(a).data;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * dy[i];
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::silu(Var x) {
  Tensor<T> y = value(x);
  for (auto& v : y.data) v = v * sigmoid(v);
  const bool needs = requires_grad(x);
  Var o = push(std::move(y), needs);
  if (needs) {
    node(o).back = [=](Graph& g) {
      const auto& xv = g.value(x).data;
      const auto& dy = g.node(o).grad.data;
      auto& d = g.grad_buffer(x).data;
      for (std::size_t i = 0; i < d.size(); ++i) {
        const T s = sigmoid(xv[i]);
        d[i] += dy[i] * s * (T(1) + xv[i] * (T(1) - s));
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::gelu(Var x) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  Tensor<T> y = value(x);
  for (auto& v : y.data) v = T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v)));
  const bool needs = requires_grad(x);
  Var o = push(std::move(y), needs);
  if (needs) {
    node(o).back = [=](Graph& g) {
      const auto& xv = g.value(x).data;
      const auto& dy = g.node(o).grad.data;
      auto& d = g.grad_buffer(x).data;
      for (std::size_t i = 0; i < d.size(); ++i) {
        const T v = xv[i];
        const T t = std::tanh(kC * (v + kA * v * v * v));
        const T dt = (T(1) - t * t) * kC * (T(1) + T(3) * kA * v * v);
        d[i] += dy[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::clamp_unit(Var x) {
  Tensor<T> y = value(x);
  for (auto& v : y.data) v = std::clamp(v, T(0), T(1));
  const bool needs = requires_grad(x);
  Var o = push(std::move(y), needs);
  if (needs) {
    node(o).back = [=](Graph& g) {
      const auto& xv = g.value(x).data;
      const auto& dy = g.node(o).grad.data;
      auto& d = g.grad_buffer(x).data;
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (xv[i] > T(0) && xv[i] < T(1)) d[i] += dy[i];
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::straight_through(Var e, const Tensor<T>& q) {
  check(value(e).shape == q.shape, "straight_through shape mismatch");
  const bool needs = requires_grad(e);
  Var o = push(q, needs);
  if (needs) {
    node(o).back = [=](Graph& g) {
      const auto& dy = g.node(o).grad.data;
      auto& d = g.grad_buffer(e).data;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::mse(Var a, const Tensor<T>& target) {
  const Tensor<T>& A = value(a);
  check(A.shape == target.shape, "mse shape mismatch " + shape_string(A.shape) + " vs " +
                                     shape_string(target.shape));
  double acc = 0.0;
  for (std::size_t i = 0; i < A.numel(); ++i) {
    const double d = static_cast<double>(A.data[i]) - target.data[i];
    acc += d * d;
  }
  const double n = static_cast<double>(A.numel());
  const bool needs = requires_grad(a);
  Var o = push(Tensor<T>({1}, {static_cast<T>(acc / n)}), needs);
  if (needs) {
    node(o).back = [=](Graph& g) {
      const T s = static_cast<T>(2.0 / n) * g.node(o).grad.data[0];
      const auto& av = g.value(a).data;
      auto& d = g.grad_buffer(a).data;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * (av[i] - target.data[i]);
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::sum(Var a) {
  double acc = 0.0;
  for (T v : value(a).data) acc += v;
  const bool needs = requires_grad(a);
  Var o = push(Tensor<T>({1}, {static_cast<T>(acc)}), needs);
  if (needs) {
    node(o).back = [=](Graph& g) {
      const T s = g.node(o).grad.data[0];
      for (auto& v : g.grad_buffer(a).data) v += s;
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::matmul(Var a, Var b) {
  const Tensor<T>& A = value(a);
  const Tensor<T>& B = value(b);
  check(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(0),
        "matmul shape mismatch " + shape_string(A.shape) + " x " + shape_string(B.shape));
  const int m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor<T> y({m, n});
  as_mat(y, m, n).noalias() = as_mat(A, m, k) * as_mat(B, k, n);
  const bool needs = requires_grad(a) || requires_grad(b);
  Var o = push(std::move(y), needs);
  if (needs) {
    node(o).back = [=](Graph& g) {
      const auto dY = as_mat(g.node(o).grad, m, n);
      if (g.requires_grad(a)) {
        as_mat(g.grad_buffer(a), m, k).noalias() += dY * as_mat(g.value(b), k, n).transpose();
      }
      if (g.requires_grad(b)) {
        as_mat(g.grad_buffer(b), k, n).noalias() += as_mat(g.value(a), m, k).transpose() * dY;
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::linear(Var x, Var w, Var b) {
  const Tensor<T>& X = value(x);
  const Tensor<T>& W = value(w);
  check(X.rank() == 2 && W.rank() == 2 && X.dim(1) == W.dim(1) &&
            value(b).numel() == static_cast<std::size_t>(W.dim(0)),
        "linear shape mismatch x" + shape_string(X.shape) + " w" + shape_string(W.shape));
  const int n = X.dim(0), in = X.dim(1), out = W.dim(0);
  Tensor<T> y({n, out});
  auto Y = as_mat(y, n, out);
  Y.noalias() = as_mat(X, n, in) * as_mat(W, out, in).transpose();
  const auto bias = CMap<T>(value(b).data.data(), 1, out);
  Y.rowwise() += bias.row(0);
  const bool needs = requires_grad(x) || requires_grad(w) || requires_grad(b);
  Var o = push(std::move(y), needs);
  if (needs) {
    node(o).back = [=](Graph& g) {
      const auto dY = as_mat(g.node(o).grad, n, out);
      if (g.requires_grad(x)) {
        as_mat(g.grad_buffer(x), n, in).noalias() += dY * as_mat(g.value(w), out, in);
      }
      if (g.requires_grad(w)) {
        as_mat(g.grad_buffer(w), out, in).noalias() += dY.transpose() * as_mat(g.value(x), n, in);
      }
      if (g.requires_grad(b)) {
        as_mat(g.grad_buffer(b), 1, out) += dY.colwise().sum();
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::embedding(Var table, const std::vector<int>& indices) {
  const Tensor<T>& E = value(table);
  check(E.rank() == 2, "embedding table must be 2-D");
  const int vocab = E.dim(0), d = E.dim(1);
  Tensor<T> y({static_cast<int>(indices.size()), d});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const int idx = indices[r];
    if (idx < 0 || idx >= vocab) {
      throw Error(Errc::out_of_range, "embedding index " + std::to_string(idx) + " outside [0," +
                                          std::to_string(vocab) + ")");
    }
    std::copy_n(E.data.begin() + static_cast<std::ptrdiff_t>(idx) * d, d,
                y.data.begin() + static_cast<std::ptrdiff_t>(r) * d);
  }
  const bool needs = requires_grad(table);
  Var o = push(std::move(y), needs);
  if (needs) {
    node(o).back = [=](Graph& g) {
      const auto& dy = g.node(o).grad.data;
      auto& dt = g.grad_buffer(table).data;
      for (std::size_t r = 0; r < indices.size(); ++r) {
        for (int j = 0; j < d; ++j) {
          dt[static_cast<std::size_t>(indices[r]) * d + j] += dy[r * d + j];
        }
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::rows(Var x, int start, int count) {
  const Tensor<T>& X = value(x);
  check(X.rank() == 2 && start >= 0 && count >= 0 && start + count <= X.dim(0),
        "row slice out of range");
  const int d = X.dim(1);
  Tensor<T> y({count, d});
  std::copy_n(X.data.begin() + static_cast<std::ptrdiff_t>(start) * d,
              static_cast<std::ptrdiff_t>(count) * d, y.data.begin());
  const bool needs = requires_grad(x);
  Var o = push(std::move(y), needs);
  if (needs) {
    node(o).back = [=](Graph& g) {
      const auto& dy = g.node(o).grad.data;
      auto& dx = g.grad_buffer(x).data;
      const std::size_t off = static_cast<std::size_t>(start) * d;
      for (std::size_t i = 0; i < dy.size(); ++i) dx[off + i] += dy[i];
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::concat_rows(Var a, Var b) {
  const Tensor<T>& A = value(a);
  const Tensor<T>& B = value(b);
  check(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(1), "concat_rows width mismatch");
  Tensor<T> y({A.dim(0) + B.dim(0), A.dim(1)});
  std::copy(A.data.begin(), A.data.end(), y.data.begin());
  std::copy(B.data.begin(), B.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(A.numel()));
  const std::size_t split = A.numel();
  const bool needs = requires_grad(a) || requires_grad(b);
  Var o = push(std::move(y), needs);
  if (needs) {
    node(o).back = [=](Graph& g) {
      const auto& dy = g.node(o).grad.data;
      if (g.requires_grad(a)) {
        auto& d = g.grad_buffer(a).data;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
      }
      if (g.requires_grad(b)) {
        auto& d = g.grad_buffer(b).data;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[split + i];
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::layernorm(Var x, Var gamma, Var beta, T eps) {
  const Tensor<T>& X = value(x);
  check(X.rank() == 2, "layernorm expects (rows, width)");
  const int n = X.dim(0), d = X.dim(1);
  check(value(gamma).numel() == static_cast<std::size_t>(d) &&
            value(beta).numel() == static_cast<std::size_t>(d),
        "layernorm affine size");
  Tensor<T> xhat({n, d});
  std::vector<T> inv_std(n);
  Tensor<T> y({n, d});
  const auto& G = value(gamma).data;
  const auto& Bt = value(beta).data;
  for (int r = 0; r < n; ++r) {
    const T* xr = X.data.data() + static_cast<std::size_t>(r) * d;
    T mean = 0;
    for (int j = 0; j < d; ++j) mean += xr[j];
    mean /= d;
    T var = 0;
    for (int j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= d;
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j) {
      const std::size_t i = static_cast<std::size_t>(r) * d + j;
      xhat.data[i] = (xr[j] - mean) * inv_std[r];
      y.data[i] = xhat.data[i] * G[j] + Bt[j];
    }
  }
  const bool needs = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
  Var o = push(std::move(y), needs);
  if (needs) {
    node(o).back = [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g) {
      const auto& dy = g.node(o).grad.data;
      if (g.requires_grad(gamma)) {
        auto& dg = g.grad_buffer(gamma).data;
        for (std::size_t i = 0; i < dy.size(); ++i) dg[i % d] += dy[i] * xhat.data[i];
      }
      if (g.requires_grad(beta)) {
        auto& db = g.grad_buffer(beta).data;
        for (std::size_t i = 0; i < dy.size(); ++i) db[i % d] += dy[i];
      }
      if (g.requires_grad(x)) {
        const auto& gv = g.value(gamma).data;
        auto& dx = g.grad_buffer(x).data;
        std::vector<T> dxhat(d);
        for (int r = 0; r < n; ++r) {
          const std::size_t base = static_cast<std::size_t>(r) * d;
          T m1 = 0, m2 = 0;
          for (int j = 0; j < d; ++j) {
            dxhat[j] = dy[base + j] * gv[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xhat.data[base + j];
          }
          m1 /= d;
          m2 /= d;
          for (int j = 0; j < d; ++j) {
            dx[base + j] += inv_std[r] * (dxhat[j] - m1 - xhat.data[base + j] * m2);
          }
        }
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::causal_attention(Var qkv, int heads) {
  const Tensor<T>& QKV = value(qkv);
  check(QKV.rank() == 2 && QKV.dim(1) % 3 == 0, "attention expects (n, 3*width)");
  const int n = QKV.dim(0);
  const int width = QKV.dim(1) / 3;
  check(heads > 0 && width % heads == 0, "width not divisible by heads");
  const int dh = width / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const int stride = 3 * width;

  // probs[h] is (n, n), lower-triangular.
  std::vector<MatR<T>> probs(heads);
  Tensor<T> y({n, width});
  for (int h = 0; h < heads; ++h) {
    using Strided = Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>>;
    const Strided Q(QKV.data.data() + h * dh, n, dh, Eigen::OuterStride<>(stride));
    const Strided K(QKV.data.data() + width + h * dh, n, dh, Eigen::OuterStride<>(stride));
    const Strided V(QKV.data.data() + 2 * width + h * dh, n, dh, Eigen::OuterStride<>(stride));
    MatR<T> S = (Q * K.transpose()) * scale;
    for (int i = 0; i < n; ++i) {
      T mx = S(i, 0);
      for (int j = 1; j <= i; ++j) mx = std::max(mx, S(i, j));
      T z = 0;
      for (int j = 0; j <= i; ++j) {
        S(i, j) = std::exp(S(i, j) - mx);
        z += S(i, j);
      }
      for (int j = 0; j <= i; ++j) S(i, j) /= z;
      for (int j = i + 1; j < n; ++j) S(i, j) = 0;
    }
    Eigen::Map<MatR<T>, 0, Eigen::OuterStride<>> Y(y.data.data() + h * dh, n, dh,
                                                    Eigen::OuterStride<>(width));
    Y.noalias() = S * V;
    probs[h] = std::move(S);
  }

  const bool needs = requires_grad(qkv);
  Var o = push(std::move(y), needs);
  if (needs) {
    node(o).back = [=, probs = std::move(probs)](Graph& g) {
      const auto& QKVv = g.value(qkv).data;
      const auto& dy = g.node(o).grad.data;
      auto& dq = g.grad_buffer(qkv).data;
      using Strided = Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>>;
      using MStrided = Eigen::Map<MatR<T>, 0, Eigen::OuterStride<>>;
      for (int h = 0; h < heads; ++h) {
        const Strided Q(QKVv.data() + h * dh, n, dh, Eigen::OuterStride<>(stride));
        const Strided K(QKVv.data() + width + h * dh, n, dh, Eigen::OuterStride<>(stride));
        const Strided V(QKVv.data() + 2 * width + h * dh, n, dh, Eigen::OuterStride<>(stride));
        const Strided dY(dy.data() + h * dh, n, dh, Eigen::OuterStride<>(width));
        const MatR<T>& P = probs[h];
        MStrided dQ(dq.data() + h * dh, n, dh, Eigen::OuterStride<>(stride));
        MStrided dK(dq.data() + width + h * dh, n, dh, Eigen::OuterStride<>(stride));
        MStrided dV(dq.data() + 2 * width + h * dh, n, dh, Eigen::OuterStride<>(stride));
        dV.noalias() += P.transpose() * dY;
        MatR<T> dP = dY * V.transpose();
        MatR<T> dS(n, n);
        for (int i = 0; i < n; ++i) {
          T dot = 0;
          for (int j = 0; j <= i; ++j) dot += dP(i, j) * P(i, j);
          for (int j = 0; j < n; ++j) dS(i, j) = j <= i ? P(i, j) * (dP(i, j) - dot) * scale : T(0);
        }
        dQ.noalias() += dS * K;
        dK.noalias() += dS.transpose() * Q;
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::log_softmax(Var x) {
  const Tensor<T>& X = value(x);
  check(X.rank() == 2, "log_softmax expects (rows, classes)");
  const int n = X.dim(0), k = X.dim(1);
  Tensor<T> y({n, k});
  for (int r = 0; r < n; ++r) {
    const T* xr = X.data.data() + static_cast<std::size_t>(r) * k;
    T* yr = y.data.data() + static_cast<std::size_t>(r) * k;
    const T mx = *std::max_element(xr, xr + k);
    T z = 0;
    for (int j = 0; j < k; ++j) z += std::exp(xr[j] - mx);
    const T lse = mx + std::log(z);
    for (int j = 0; j < k; ++j) yr[j] = xr[j] - lse;
  }
  const bool needs = requires_grad(x);
  Var o = push(std::move(y), needs);
  if (needs) {
    node(o).back = [=](Graph& g) {
      const auto& yv = g.node(o).value.data;
      const auto& dy = g.node(o).grad.data;
      auto& dx = g.grad_buffer(x).data;
      for (int r = 0; r < n; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * k;
        T s = 0;
        for (int j = 0; j < k; ++j) s += dy[base + j];
        for (int j = 0; j < k; ++j) dx[base + j] += dy[base + j] - std::exp(yv[base + j]) * s;
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::nll(Var log_probs, const std::vector<int>& targets) {
  const Tensor<T>& L = value(log_probs);
  check(L.rank() == 2 && static_cast<std::size_t>(L.dim(0)) == targets.size(),
        "nll expects one target per row");
  const int k = L.dim(1);
  double acc = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] < 0 || targets[r] >= k) throw Error(Errc::out_of_range, "nll target range");
    acc -= L.data[r * k + targets[r]];
  }
  const double n = static_cast<double>(targets.size());
  const bool needs = requires_grad(log_probs);
  Var o = push(Tensor<T>({1}, {static_cast<T>(acc / n)}), needs);
  if (needs) {
    node(o).back = [=](Graph& g) {
      const T s = g.node(o).grad.data[0] / static_cast<T>(n);
      auto& d = g.grad_buffer(log_probs).data;
      for (std::size_t r = 0; r < targets.size(); ++r) d[r * k + targets[r]] -= s;
    };
  }
  return o;
}

template <typename T>
void Graph<T>::backward(Var root) {
  check(value(root).numel() == 1, "backward() without a seed needs a scalar root");
  backward(root, Tensor<T>(value(root).shape, T(1)));
}

template <typename T>
void Graph<T>::backward(Var root, const Tensor<T>& seed) {
  check(seed.shape == value(root).shape, "backward seed shape mismatch");
  if (!requires_grad(root)) return;
  auto& g0 = grad_buffer(root).data;
  for (std::size_t i = 0; i < g0.size(); ++i) g0[i] += seed.data[i];
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.grad.data.empty()) continue;
    if (n.back) {
      auto back = n.back;  // the closure may touch nodes_ entries; keep a copy alive
      back(*this);
    }
  }
  for (Node& n : nodes_) {
    if (!n.param || n.grad.data.empty()) continue;
    auto& pg = n.param->grad;
    if (pg.shape != n.value.shape) pg = Tensor<T>(n.value.shape);
    for (std::size_t i = 0; i < pg.data.size(); ++i) pg.data[i] += n.grad.data[i];
  }
}

template <typename T>
Adam<T>::Adam(std::vector<Parameter<T>*> params, Options options)
    : params_(std::move(params)), options_(options) {
  for (auto* p : params_) {
    m_.emplace_back(p->value.shape);
    v_.emplace_back(p->value.shape);
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const T step_size = static_cast<T>(options_.lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(options_.eps);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& w = params_[k]->value.data;
    const auto& g = params_[k]->grad.data;
    auto& m = m_[k].data;
    auto& v = v_[k].data;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = static_cast<T>(b1) * m[i] + static_cast<T>(1.0 - b1) * g[i];
      v[i] = static_cast<T>(b2) * v[i] + static_cast<T>(1.0 - b2) * g[i] * g[i];
      w[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
  }
}

template <typename T>
void uniform_init(Tensor<T>& t, double bound, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
}

template struct Tensor<float>;
template struct Tensor<double>;
template struct Parameter<float>;
template struct Parameter<double>;
template class Graph<float>;
template class Graph<double>;
template class Adam<float>;
template class Adam<double>;
template void uniform_init<float>(Tensor<float>&, double, std::uint64_t);
template void uniform_init<double>(Tensor<double>&, double, std::uint64_t);

}  // namespace acetone::ad
