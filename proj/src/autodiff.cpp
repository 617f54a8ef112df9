#include "tpld/autodiff.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include <Eigen/Core>

#include "tpld/error.hpp"
#include "tpld/rng.hpp"

namespace tpld::ad {

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

std::size_t rows_of(const Shape& s) { return s.size() == 2 ? s[0] : 1; }
std::size_t cols_of(const Shape& s) { return s.empty() ? 1 : s.back(); }

template <typename T>
ConstMatMap<T> cmap(const Node<T>& n) {
  return ConstMatMap<T>(n.value.data(), static_cast<Eigen::Index>(rows_of(n.shape)),
                        static_cast<Eigen::Index>(cols_of(n.shape)));
}

template <typename T>
MatMap<T> gmap(Node<T>& n) {
  return MatMap<T>(n.grad.data(), static_cast<Eigen::Index>(rows_of(n.shape)),
                   static_cast<Eigen::Index>(cols_of(n.shape)));
}

template <typename T>
ConstMatMap<T> cgmap(const Node<T>& n) {
  return ConstMatMap<T>(n.grad.data(), static_cast<Eigen::Index>(rows_of(n.shape)),
                        static_cast<Eigen::Index>(cols_of(n.shape)));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what + " (shape " + shape_str(a) + ")");
}

template <typename T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> value, std::vector<NodePtr<T>> parents,
                  std::function<void(Node<T>&)> fn) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->is_leaf = false;
  n->op = op;
  bool rg = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) rg = rg || p->requires_grad;
  }
  if (rg) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return Tensor<T>(std::move(n));
}

template <typename T>
void require_defined(const Tensor<T>& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
}

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
  require_defined(t, op);
  if (t.rank() == 0) shape_fail(op, t.shape(), "expected a vector or matrix");
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  if (shape.size() > 2) throw ShapeError("Tensor: rank above 2 is not supported " + shape_str(shape));
  if (ad::numel(shape) != values.size()) {
    throw ShapeError("Tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
  if (requires_grad) node_->grad.assign(node_->value.size(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  const auto n = ad::numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  return rows_of(node_->shape);
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  return cols_of(node_->shape);
}

template <typename T>
void Tensor<T>::zero_grad() {
  node_->grad.assign(node_->value.size(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
  return node_->value[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->value);
}

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) shape_fail("matmul", a.shape(), b.shape());
  const auto m = a.rows(), n = b.cols();
  std::vector<T> out(m * n);
  MatMap<T>(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)).noalias() =
      cmap(*a.node()) * cmap(*b.node());
  return make_op<T>("matmul", Shape{m, n}, std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) gmap(pa).noalias() += cgmap(self) * cmap(pb).transpose();
    if (pb.requires_grad) gmap(pb).noalias() += cmap(pa).transpose() * cgmap(self);
  });
}

template <typename T>
Tensor<T> matmul_t(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_t");
  require_matrix(b, "matmul_t");
  if (a.cols() != b.cols()) shape_fail("matmul_t", a.shape(), b.shape());
  const auto m = a.rows(), n = b.rows();
  std::vector<T> out(m * n);
  MatMap<T>(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)).noalias() =
      cmap(*a.node()) * cmap(*b.node()).transpose();
  return make_op<T>("matmul_t", Shape{m, n}, std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) gmap(pa).noalias() += cgmap(self) * cmap(pb);
    if (pb.requires_grad) gmap(pb).noalias() += cgmap(self).transpose() * cmap(pa);
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  if (a.shape() == b.shape()) {
    std::vector<T> out(a.values().begin(), a.values().end());
    const auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return make_op<T>("add", a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
      for (auto& p : self.parents) {
        if (!p->requires_grad) continue;
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
      }
    });
  }
  // Row-vector broadcast.
  if (a.rank() == 2 && b.rank() >= 1 && b.rows() == 1 && b.cols() == a.cols()) {
    const auto r = a.rows(), c = a.cols();
    std::vector<T> out(a.values().begin(), a.values().end());
    const auto bv = b.values();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bv[j];
    }
    return make_op<T>("add", a.shape(), std::move(out), {a.node(), b.node()}, [r, c](Node<T>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
      }
      if (pb.requires_grad) {
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) pb.grad[j] += self.grad[i * c + j];
        }
      }
    });
  }
  shape_fail("add", a.shape(), b.shape());
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  if (a.shape() != b.shape()) shape_fail("sub", a.shape(), b.shape());
  std::vector<T> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_op<T>("sub", a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += self.grad[i];
      if (pb.requires_grad) pb.grad[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> multiply(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a, "multiply");
  require_defined(b, "multiply");
  if (a.shape() != b.shape()) shape_fail("multiply", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op<T>("multiply", a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += self.grad[i] * pb.value[i];
      if (pb.requires_grad) pb.grad[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  require_defined(a, "scale");
  std::vector<T> out(a.values().begin(), a.values().end());
  for (auto& x : out) x *= s;
  return make_op<T>("scale", a.shape(), std::move(out), {a.node()}, [s](Node<T>& self) {
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += s * self.grad[i];
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  for (const auto& p : parts) require_matrix(p, "concat");
  std::vector<NodePtr<T>> parents;
  std::vector<std::size_t> extent;
  const std::size_t r0 = parts[0].rows(), c0 = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (axis == 0 && p.cols() != c0) shape_fail("concat", parts[0].shape(), p.shape());
    if (axis == 1 && p.rows() != r0) shape_fail("concat", parts[0].shape(), p.shape());
    extent.push_back(axis == 0 ? p.rows() : p.cols());
    total += extent.back();
    parents.push_back(p.node());
  }
  const std::size_t R = axis == 0 ? total : r0;
  const std::size_t C = axis == 0 ? c0 : total;
  std::vector<T> out(R * C);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].values();
    const auto pr = parts[k].rows(), pc = parts[k].cols();
    for (std::size_t i = 0; i < pr; ++i) {
      for (std::size_t j = 0; j < pc; ++j) {
        const std::size_t oi = axis == 0 ? offset + i : i;
        const std::size_t oj = axis == 0 ? j : offset + j;
        out[oi * C + oj] = v[i * pc + j];
      }
    }
    offset += extent[k];
  }
  return make_op<T>("concat", Shape{R, C}, std::move(out), std::move(parents), [axis, C](Node<T>& self) {
    std::size_t off = 0;
    for (auto& p : self.parents) {
      const auto pr = rows_of(p->shape), pc = cols_of(p->shape);
      if (p->requires_grad) {
        for (std::size_t i = 0; i < pr; ++i) {
          for (std::size_t j = 0; j < pc; ++j) {
            const std::size_t oi = axis == 0 ? off + i : i;
            const std::size_t oj = axis == 0 ? j : off + j;
            p->grad[i * pc + j] += self.grad[oi * C + oj];
          }
        }
      }
      off += axis == 0 ? pr : pc;
    }
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice");
  if (axis != 0 && axis != 1) throw ShapeError("slice: axis must be 0 or 1");
  const std::size_t R = a.rows(), C = a.cols();
  const std::size_t limit = axis == 0 ? R : C;
  if (begin >= end || end > limit) {
    shape_fail("slice", a.shape(), "range [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                                       std::to_string(axis));
  }
  const std::size_t r = axis == 0 ? end - begin : R;
  const std::size_t c = axis == 0 ? C : end - begin;
  std::vector<T> out(r * c);
  const auto v = a.values();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = axis == 0 ? v[(begin + i) * C + j] : v[i * C + begin + j];
    }
  }
  return make_op<T>("slice", Shape{r, c}, std::move(out), {a.node()}, [axis, begin, r, c, C](Node<T>& self) {
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const std::size_t src = axis == 0 ? (begin + i) * C + j : i * C + begin + j;
        pa.grad[src] += self.grad[i * c + j];
      }
    }
  });
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  require_matrix(table, "embedding_lookup");
  if (ids.empty()) throw ShapeError("embedding_lookup: empty id sequence");
  const std::size_t V = table.rows(), d = table.cols();
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  std::vector<T> out(idx.size() * d);
  const auto v = table.values();
  for (std::size_t t = 0; t < idx.size(); ++t) {
    if (idx[t] < 0 || static_cast<std::size_t>(idx[t]) >= V) {
      throw ShapeError("embedding_lookup: id " + std::to_string(idx[t]) + " outside table of " + std::to_string(V) +
                       " rows");
    }
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(idx[t] * d), d, out.begin() + static_cast<std::ptrdiff_t>(t * d));
  }
  const std::size_t T_ = idx.size();
  return make_op<T>("embedding_lookup", Shape{T_, d}, std::move(out), {table.node()},
                    [idx = std::move(idx), d](Node<T>& self) {
                      auto& pt = *self.parents[0];
                      for (std::size_t t = 0; t < idx.size(); ++t) {
                        const std::size_t row = static_cast<std::size_t>(idx[t]) * d;
                        for (std::size_t j = 0; j < d; ++j) pt.grad[row + j] += self.grad[t * d + j];
                      }
                    });
}

namespace {

// Visits every line (row for axis 1, column for axis 0) of an R x C matrix as
// (start, stride, length).
template <typename F>
void for_each_line(std::size_t R, std::size_t C, int axis, F&& f) {
  if (axis == 1) {
    for (std::size_t i = 0; i < R; ++i) f(i * C, std::size_t{1}, C);
  } else {
    for (std::size_t j = 0; j < C; ++j) f(j, C, R);
  }
}

template <typename T>
void check_softmax_args(const Tensor<T>& a, int axis, const Mask* mask, const char* op) {
  require_matrix(a, op);
  if (axis != 0 && axis != 1) throw ShapeError(std::string(op) + ": axis must be 0 or 1");
  if (mask && mask->size() != a.numel()) {
    throw ShapeError(std::string(op) + ": mask has " + std::to_string(mask->size()) + " entries for shape " +
                     shape_str(a.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis, const Mask* mask) {
  check_softmax_args(a, axis, mask, "softmax");
  const std::size_t R = a.rows(), C = a.cols();
  const auto v = a.values();
  std::vector<T> out(a.numel(), T(0));
  Mask keep = mask ? *mask : Mask(a.numel(), 1);
  for_each_line(R, C, axis, [&](std::size_t start, std::size_t stride, std::size_t len) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < len; ++k) {
      const auto i = start + k * stride;
      if (keep[i]) mx = std::max(mx, v[i]);
    }
    if (mx == -std::numeric_limits<T>::infinity()) return;
    T z = 0;
    for (std::size_t k = 0; k < len; ++k) {
      const auto i = start + k * stride;
      if (keep[i]) {
        out[i] = std::exp(v[i] - mx);
        z += out[i];
      }
    }
    for (std::size_t k = 0; k < len; ++k) out[start + k * stride] /= z;
  });
  return make_op<T>("softmax", a.shape(), std::move(out), {a.node()}, [R, C, axis](Node<T>& self) {
    auto& pa = *self.parents[0];
    for_each_line(R, C, axis, [&](std::size_t start, std::size_t stride, std::size_t len) {
      T dot = 0;
      for (std::size_t k = 0; k < len; ++k) {
        const auto i = start + k * stride;
        dot += self.grad[i] * self.value[i];
      }
      for (std::size_t k = 0; k < len; ++k) {
        const auto i = start + k * stride;
        pa.grad[i] += self.value[i] * (self.grad[i] - dot);
      }
    });
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& a, int axis, const Mask* mask) {
  check_softmax_args(a, axis, mask, "log_softmax");
  const std::size_t R = a.rows(), C = a.cols();
  const auto v = a.values();
  std::vector<T> out(a.numel(), T(0));
  auto keep = std::make_shared<Mask>(mask ? *mask : Mask(a.numel(), 1));
  for_each_line(R, C, axis, [&](std::size_t start, std::size_t stride, std::size_t len) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < len; ++k) {
      const auto i = start + k * stride;
      if ((*keep)[i]) mx = std::max(mx, v[i]);
    }
    if (mx == -std::numeric_limits<T>::infinity()) return;
    T z = 0;
    for (std::size_t k = 0; k < len; ++k) {
      const auto i = start + k * stride;
      if ((*keep)[i]) z += std::exp(v[i] - mx);
    }
    const T lse = mx + std::log(z);
    for (std::size_t k = 0; k < len; ++k) {
      const auto i = start + k * stride;
      if ((*keep)[i]) out[i] = v[i] - lse;
    }
  });
  return make_op<T>("log_softmax", a.shape(), std::move(out), {a.node()}, [R, C, axis, keep](Node<T>& self) {
    auto& pa = *self.parents[0];
    for_each_line(R, C, axis, [&](std::size_t start, std::size_t stride, std::size_t len) {
      T gsum = 0;
      for (std::size_t k = 0; k < len; ++k) {
        const auto i = start + k * stride;
        if ((*keep)[i]) gsum += self.grad[i];
      }
      for (std::size_t k = 0; k < len; ++k) {
        const auto i = start + k * stride;
        if ((*keep)[i]) pa.grad[i] += self.grad[i] - std::exp(self.value[i]) * gsum;
      }
    });
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  require_matrix(x, "layer_norm");
  const std::size_t R = x.rows(), C = x.cols();
  if (gain.numel() != C) shape_fail("layer_norm", x.shape(), gain.shape());
  if (bias.numel() != C) shape_fail("layer_norm", x.shape(), bias.shape());
  const auto v = x.values(), g = gain.values(), b = bias.values();
  std::vector<T> out(x.numel()), xhat(x.numel()), rstd(R);
  for (std::size_t i = 0; i < R; ++i) {
    T mu = 0;
    for (std::size_t j = 0; j < C; ++j) mu += v[i * C + j];
    mu /= static_cast<T>(C);
    T var = 0;
    for (std::size_t j = 0; j < C; ++j) {
      const T d = v[i * C + j] - mu;
      var += d * d;
    }
    var /= static_cast<T>(C);
    rstd[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < C; ++j) {
      xhat[i * C + j] = (v[i * C + j] - mu) * rstd[i];
      out[i * C + j] = xhat[i * C + j] * g[j] + b[j];
    }
  }
  return make_op<T>(
      "layer_norm", x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
      [R, C, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        for (std::size_t i = 0; i < R; ++i) {
          const T* gy = &self.grad[i * C];
          const T* xh = &xhat[i * C];
          if (pg.requires_grad || pb.requires_grad) {
            for (std::size_t j = 0; j < C; ++j) {
              if (pg.requires_grad) pg.grad[j] += gy[j] * xh[j];
              if (pb.requires_grad) pb.grad[j] += gy[j];
            }
          }
          if (px.requires_grad) {
            T mean_d = 0, mean_dx = 0;
            for (std::size_t j = 0; j < C; ++j) {
              const T d = gy[j] * pg.value[j];
              mean_d += d;
              mean_dx += d * xh[j];
            }
            mean_d /= static_cast<T>(C);
            mean_dx /= static_cast<T>(C);
            for (std::size_t j = 0; j < C; ++j) {
              const T d = gy[j] * pg.value[j];
              px.grad[i * C + j] += rstd[i] * (d - mean_d - xh[j] * mean_dx);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  require_defined(a, "relu");
  std::vector<T> out(a.values().begin(), a.values().end());
  for (auto& x : out) x = x > T(0) ? x : T(0);
  return make_op<T>("relu", a.shape(), std::move(out), {a.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.value[i] > T(0)) pa.grad[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  require_defined(a, "gelu");
  constexpr T k = static_cast<T>(0.7978845608028654);  // sqrt(2 / pi)
  constexpr T c = static_cast<T>(0.044715);
  std::vector<T> out(a.numel());
  const auto v = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = v[i];
    out[i] = T(0.5) * x * (T(1) + std::tanh(k * (x + c * x * x * x)));
  }
  return make_op<T>("gelu", a.shape(), std::move(out), {a.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T x = pa.value[i];
      const T t = std::tanh(k * (x + c * x * x * x));
      const T d = T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * k * (T(1) + T(3) * c * x * x);
      pa.grad[i] += self.grad[i] * d;
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_matrix(a, "transpose");
  const std::size_t R = a.rows(), C = a.cols();
  std::vector<T> out(a.numel());
  const auto v = a.values();
  for (std::size_t i = 0; i < R; ++i) {
    for (std::size_t j = 0; j < C; ++j) out[j * R + i] = v[i * C + j];
  }
  return make_op<T>("transpose", Shape{C, R}, std::move(out), {a.node()}, [R, C](Node<T>& self) {
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < R; ++i) {
      for (std::size_t j = 0; j < C; ++j) pa.grad[i * C + j] += self.grad[j * R + i];
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  require_defined(a, "sum");
  T s = 0;
  for (auto x : a.values()) s += x;
  return make_op<T>("sum", Shape{}, std::vector<T>{s}, {a.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    for (auto& g : pa.grad) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  require_defined(a, "mean");
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  T s = 0;
  for (auto x : a.values()) s += x;
  const T inv = T(1) / static_cast<T>(a.numel());
  return make_op<T>("mean", Shape{}, std::vector<T>{s * inv}, {a.node()}, [inv](Node<T>& self) {
    auto& pa = *self.parents[0];
    for (auto& g : pa.grad) g += self.grad[0] * inv;
  });
}

template <typename T>
Tensor<T> row_normalize(const Tensor<T>& a) {
  require_matrix(a, "row_normalize");
  const std::size_t R = a.rows(), C = a.cols();
  const auto v = a.values();
  std::vector<T> out(a.numel()), norms(R);
  for (std::size_t i = 0; i < R; ++i) {
    T ss = 0;
    for (std::size_t j = 0; j < C; ++j) ss += v[i * C + j] * v[i * C + j];
    if (!(ss > T(0))) throw NumericError("row_normalize: row " + std::to_string(i) + " has zero norm");
    norms[i] = std::sqrt(ss);
    for (std::size_t j = 0; j < C; ++j) out[i * C + j] = v[i * C + j] / norms[i];
  }
  return make_op<T>("row_normalize", a.shape(), std::move(out), {a.node()},
                    [R, C, norms = std::move(norms)](Node<T>& self) {
                      auto& pa = *self.parents[0];
                      for (std::size_t i = 0; i < R; ++i) {
                        T dot = 0;
                        for (std::size_t j = 0; j < C; ++j) dot += self.grad[i * C + j] * self.value[i * C + j];
                        for (std::size_t j = 0; j < C; ++j) {
                          pa.grad[i * C + j] += (self.grad[i * C + j] - self.value[i * C + j] * dot) / norms[i];
                        }
                      }
                    });
}

template <typename T>
Tensor<T> gather_sum(const Tensor<T>& a, const std::vector<std::pair<std::size_t, std::size_t>>& at) {
  require_matrix(a, "gather_sum");
  const std::size_t R = a.rows(), C = a.cols();
  T s = 0;
  std::vector<std::size_t> flat;
  flat.reserve(at.size());
  for (const auto& [r, c] : at) {
    if (r >= R || c >= C) shape_fail("gather_sum", a.shape(), "index out of range");
    flat.push_back(r * C + c);
    s += a.values()[flat.back()];
  }
  return make_op<T>("gather_sum", Shape{}, std::vector<T>{s}, {a.node()}, [flat = std::move(flat)](Node<T>& self) {
    auto& pa = *self.parents[0];
    for (auto i : flat) pa.grad[i] += self.grad[0];
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double rate, Rng& rng) {
  require_defined(a, "dropout");
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw ShapeError("dropout: rate must be below 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> factor(a.numel());
  for (auto& f : factor) f = rng.uniform01() < rate ? T(0) : keep_scale;
  std::vector<T> out(a.numel());
  const auto v = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] * factor[i];
  return make_op<T>("dropout", a.shape(), std::move(out), {a.node()}, [factor = std::move(factor)](Node<T>& self) {
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * factor[i];
  });
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets, const Mask& mask,
                        Reduction reduction) {
  require_matrix(logits, "cross_entropy");
  const std::size_t R = logits.rows(), V = logits.cols();
  if (targets.size() != R) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(logits.shape()));
  }
  if (!mask.empty() && mask.size() != R) {
    throw ShapeError("cross_entropy: mask length " + std::to_string(mask.size()) + " for " + std::to_string(R) +
                     " positions");
  }
  std::size_t active = 0;
  for (std::size_t t = 0; t < R; ++t) {
    if (mask.empty() || mask[t]) {
      ++active;
      if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= V) {
        throw ShapeError("cross_entropy: target " + std::to_string(targets[t]) + " outside vocabulary of " +
                         std::to_string(V));
      }
    }
  }
  if (active == 0) throw ShapeError("cross_entropy: every position is masked");
  const T w = reduction == Reduction::kMean ? T(1) / static_cast<T>(active) : T(1);

  const auto v = logits.values();
  std::vector<T> probs(R * V, T(0));
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> on(R, 0);
  T loss = 0;
  for (std::size_t t = 0; t < R; ++t) {
    if (!(mask.empty() || mask[t])) continue;
    on[t] = 1;
    const T* row = &v[t * V];
    T mx = *std::max_element(row, row + V);
    T z = 0;
    for (std::size_t j = 0; j < V; ++j) {
      probs[t * V + j] = std::exp(row[j] - mx);
      z += probs[t * V + j];
    }
    for (std::size_t j = 0; j < V; ++j) probs[t * V + j] /= z;
    loss += -(row[tgt[t]] - mx - std::log(z));
  }
  return make_op<T>("cross_entropy", Shape{}, std::vector<T>{loss * w}, {logits.node()},
                    [R, V, w, probs = std::move(probs), tgt = std::move(tgt), on = std::move(on)](Node<T>& self) {
                      auto& pl = *self.parents[0];
                      const T g = self.grad[0] * w;
                      for (std::size_t t = 0; t < R; ++t) {
                        if (!on[t]) continue;
                        for (std::size_t j = 0; j < V; ++j) pl.grad[t * V + j] += g * probs[t * V + j];
                        pl.grad[t * V + static_cast<std::size_t>(tgt[t])] -= g;
                      }
                    });
}

template <typename T>
Tensor<T> l2_sq(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a, "l2_sq");
  require_defined(b, "l2_sq");
  if (a.shape() != b.shape()) shape_fail("l2_sq", a.shape(), b.shape());
  const auto av = a.values(), bv = b.values();
  std::vector<T> diff(a.numel());
  T s = 0;
  for (std::size_t i = 0; i < diff.size(); ++i) {
    diff[i] = av[i] - bv[i];
    s += diff[i] * diff[i];
  }
  return make_op<T>("l2_sq", Shape{}, std::vector<T>{s}, {a.node(), b.node()},
                    [diff = std::move(diff)](Node<T>& self) {
                      auto& pa = *self.parents[0];
                      auto& pb = *self.parents[1];
                      const T g = T(2) * self.grad[0];
                      for (std::size_t i = 0; i < diff.size(); ++i) {
                        if (pa.requires_grad) pa.grad[i] += g * diff[i];
                        if (pb.requires_grad) pb.grad[i] -= g * diff[i];
                      }
                    });
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------
template <typename T>
void backward(const Tensor<T>& loss) {
  require_defined(loss, "backward");
  if (loss.rank() != 0) throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (!n->is_leaf) {
      n->grad.assign(n->value.size(), T(0));
    } else if (n->grad.size() != n->value.size()) {
      n->grad.assign(n->value.size(), T(0));
    }
  }
  Node<T>* root = loss.node().get();
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->is_leaf && n->backward_fn) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// gradient check
// ---------------------------------------------------------------------------
GradCheckReport grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> inputs, double eps,
                           std::size_t max_coords) {
  for (auto& x : inputs) {
    if (!x.requires_grad()) throw ShapeError("grad_check: inputs must require grad");
    x.zero_grad();
  }
  {
    const auto y = f();
    backward(y);
  }
  GradCheckReport report;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& x = inputs[k];
    const std::vector<double> analytic(x.grad().begin(), x.grad().end());
    auto values = x.mutable_values();
    const std::size_t n = values.size();
    const std::size_t stride = (max_coords > 0 && n > max_coords) ? (n + max_coords - 1) / max_coords : 1;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = values[i];
      values[i] = orig + eps;
      const double fp = f().item();
      values[i] = orig - eps;
      const double fm = f().item();
      values[i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      // Differences inside the rounding band of the two evaluations carry no
      // information (an exactly-zero gradient shows up as pure noise here).
      const double noise = 16.0 * std::numeric_limits<double>::epsilon() * std::max({1.0, std::abs(fp), std::abs(fm)}) / eps;
      const double diff = std::abs(analytic[i] - numeric);
      const double err = diff <= noise ? 0.0 : diff / std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
      ++report.coords_checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.tensor_index = k;
        report.coord = i;
        report.analytic = analytic[i];
        report.numeric = numeric;
      }
    }
  }
  return report;
}

double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, Tensor<double> x, double eps) {
  return grad_check([&] { return f(x); }, {x}, eps).max_rel_error;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), T(0));
      state.v.emplace_back(p.numel(), T(0));
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (state.m[k].size() != params[k].numel()) throw ShapeError("adam_step: moment shape mismatch");
    const auto g = params[k].grad();
    if (g.size() != params[k].numel()) throw ShapeError("adam_step: parameter has no gradient buffer");
    for (auto x : g) {
      if (!std::isfinite(static_cast<double>(x))) {
        throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(k));
      }
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].mutable_values();
    const auto g = params[k].grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const double mhat = static_cast<double>(m[i]) / bc1;
      const double vhat = static_cast<double>(v[i]) / bc2;
      p[i] = static_cast<T>(static_cast<double>(p[i]) - state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------
#define TPLD_INSTANTIATE(T)                                                                                     \
  template class Tensor<T>;                                                                                     \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> matmul_t(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> multiply(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> scale(const Tensor<T>&, T);                                                                \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                                                \
  template Tensor<T> slice(const Tensor<T>&, int, std::size_t, std::size_t);                                    \
  template Tensor<T> embedding_lookup(const Tensor<T>&, std::span<const std::int32_t>);                         \
  template Tensor<T> softmax(const Tensor<T>&, int, const Mask*);                                               \
  template Tensor<T> log_softmax(const Tensor<T>&, int, const Mask*);                                           \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                       \
  template Tensor<T> relu(const Tensor<T>&);                                                                    \
  template Tensor<T> gelu(const Tensor<T>&);                                                                    \
  template Tensor<T> transpose(const Tensor<T>&);                                                               \
  template Tensor<T> sum(const Tensor<T>&);                                                                     \
  template Tensor<T> mean(const Tensor<T>&);                                                                    \
  template Tensor<T> row_normalize(const Tensor<T>&);                                                           \
  template Tensor<T> gather_sum(const Tensor<T>&, const std::vector<std::pair<std::size_t, std::size_t>>&);     \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng&);                                                   \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::int32_t>, const Mask&, Reduction);    \
  template Tensor<T> l2_sq(const Tensor<T>&, const Tensor<T>&);                                                 \
  template void backward(const Tensor<T>&);                                                                     \
  template void adam_step(std::span<Tensor<T>>, AdamState<T>&);

TPLD_INSTANTIATE(float)
TPLD_INSTANTIATE(double)

#undef TPLD_INSTANTIATE

}  // namespace tpld::ad
