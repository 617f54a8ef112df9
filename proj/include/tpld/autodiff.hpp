#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// tensors of rank 0, 1 or 2. Rank-1 tensors behave as 1 x n row vectors in
// matrix operations. All ops are instantiated for float and double.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tpld {
class Rng;
}

namespace tpld::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Graph recording is on by default; a NoGradGuard disables it for the
// current thread (inference, finite differences).
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(T value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const T> values() const { return node_->value; }
  // Mutable access for optimizers and finite differences only.
  std::span<T> mutable_values() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad; }

  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad();
  T item() const;
  T at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  const char* op() const { return node_->op; }

  // Same values, no graph history.
  Tensor detach() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

using Mask = std::vector<std::uint8_t>;  // 1 = keep

// ---- core ops -------------------------------------------------------------
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// a * b^T, without materialising the transpose.
template <typename T> Tensor<T> matmul_t(const Tensor<T>& a, const Tensor<T>& b);
// Same shapes, or b a row vector broadcast over the rows of a.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> multiply(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T> Tensor<T> slice(const Tensor<T>& a, int axis, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const std::int32_t> ids);
// Masked entries are excluded from the normaliser and produce 0.
template <typename T> Tensor<T> softmax(const Tensor<T>& a, int axis, const Mask* mask = nullptr);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& a, int axis, const Mask* mask = nullptr);
// Row-wise normalisation with learned gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5));
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> gelu(const Tensor<T>& a);  // tanh approximation
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
// Each row divided by its L2 norm; a zero row is a NumericError.
template <typename T> Tensor<T> row_normalize(const Tensor<T>& a);
// Sum of the listed (row, col) entries; repeated entries count repeatedly.
template <typename T>
Tensor<T> gather_sum(const Tensor<T>& a, const std::vector<std::pair<std::size_t, std::size_t>>& at);
// Inverted dropout; identity when rate == 0.
template <typename T> Tensor<T> dropout(const Tensor<T>& a, double rate, Rng& rng);

// ---- losses ---------------------------------------------------------------
enum class Reduction { kMean, kSum };

// Negative log-likelihood of `targets` under row-wise softmax(logits),
// reduced over positions with mask[t] != 0 (empty mask = all positions).
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets, const Mask& mask = {},
                        Reduction reduction = Reduction::kMean);

// Squared Euclidean distance sum_i (a_i - b_i)^2.
template <typename T> Tensor<T> l2_sq(const Tensor<T>& a, const Tensor<T>& b);

// ---- differentiation ------------------------------------------------------
// Accumulates d loss / d leaf into every reachable leaf that requires grad.
// Intermediate gradients are recomputed on each call, so calling twice
// without zeroing doubles the leaf gradients.
template <typename T> void backward(const Tensor<T>& loss);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t tensor_index = 0;
  std::size_t coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords_checked = 0;
};

// Central finite differences against backward(). Relative error per
// coordinate is |a - n| / max(1e-8, |a| + |n|), or 0 when |a - n| is within
// the rounding noise of the two evaluations. When max_coords > 0 at most
// that many evenly spaced coordinates are checked per input.
GradCheckReport grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> inputs,
                           double eps = 1e-5, std::size_t max_coords = 0);
double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, Tensor<double> x,
                  double eps = 1e-5);

// ---- optimizer ------------------------------------------------------------
template <typename T>
struct AdamState {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;

  void reset() {
    step = 0;
    m.clear();
    v.clear();
  }
};

// One bias-corrected Adam update from the parameters' gradient buffers.
// Throws NumericError before touching anything if a gradient is not finite.
template <typename T> void adam_step(std::span<Tensor<T>> params, AdamState<T>& state);

}  // namespace tpld::ad
