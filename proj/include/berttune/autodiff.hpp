#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Tensor is a shared handle to a matrix of doubles. Operations are free
// functions taking the Graph that records them; the graph stores one node per
// primitive application in creation order, which is already a topological
// order, so backward() simply walks the tape in reverse.
//
// Gradients accumulate into each tensor's grad buffer. Tensors that do not
// require gradients never allocate one.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace berttune::ad {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

/// Thrown when a primitive receives operands of incompatible shapes. The
/// message starts with the primitive name.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor row(std::vector<double> values, bool requires_grad = false);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  std::size_t rows() const { return data_->shape.rows; }
  std::size_t cols() const { return data_->shape.cols; }
  std::size_t size() const { return data_->values.size(); }

  std::span<const double> values() const { return data_->values; }
  std::span<double> mutable_values() { return data_->values; }
  std::span<const double> row_values(std::size_t r) const {
    return values().subspan(r * cols(), cols());
  }
  double at(std::size_t r, std::size_t c) const {
    return data_->values[r * cols() + c];
  }
  /// Value of a 1x1 tensor.
  double item() const;

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool on);

  bool has_grad() const { return !data_->grad.empty() || size() == 0; }
  /// Empty span when no gradient has been stored.
  std::span<const double> grad() const { return data_->grad; }
  /// Gradient buffer, allocated as zeros on first use. Only valid for tensors
  /// that require gradients.
  std::span<double> mutable_grad();
  void zero_grad();

  /// A new leaf holding a copy of the values; no gradient and no history.
  Tensor clone(bool requires_grad = false) const;

  bool same_as(const Tensor& other) const { return data_ == other.data_; }

 private:
  std::shared_ptr<detail::TensorData> data_;
};

class Graph;

/// Adds the contribution of `out.grad()` to the gradients of the inputs.
/// Inputs that do not require gradients must be left untouched.
using BackwardFn =
    std::function<void(const Tensor& out, std::span<Tensor> inputs)>;

class Graph {
 public:
  /// A non-recording graph evaluates values only; no backward is possible.
  explicit Graph(bool record = true) : record_(record) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  bool recording() const { return record_; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Registers a primitive application. When recording and at least one
  /// input requires gradients, the output is marked as requiring gradients
  /// and a node is appended to the tape.
  Tensor record(std::string_view op, Tensor output, std::vector<Tensor> inputs,
                BackwardFn backward);

  /// Reverse sweep from a scalar loss. Leaf tensors reached by the graph
  /// accumulate into their grad buffers; leaves that take part in the graph
  /// but not in the loss end up with zero gradients.
  void backward(const Tensor& loss);

 private:
  struct Node {
    std::string op;
    Tensor output;
    std::vector<Tensor> inputs;
    BackwardFn backward;
  };

  bool record_ = true;
  bool consumed_ = false;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitives. Every function checks its operand shapes and throws ShapeError
// naming itself on mismatch.

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);
/// a * b^T without materialising the transpose.
Tensor matmul_nt(Graph& g, const Tensor& a, const Tensor& b);
Tensor transpose(Graph& g, const Tensor& a);

Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor div(Graph& g, const Tensor& a, const Tensor& b);
/// a (m x n) + bias (1 x n) broadcast over rows.
Tensor add_row(Graph& g, const Tensor& a, const Tensor& bias);
Tensor scale(Graph& g, const Tensor& a, double factor);

Tensor exp(Graph& g, const Tensor& a);
/// log(max(a, floor)); the floor blocks the gradient where it is active.
Tensor log(Graph& g, const Tensor& a, double floor = 0.0);
/// tanh approximation of GELU.
Tensor gelu(Graph& g, const Tensor& a);

Tensor sum(Graph& g, const Tensor& a);
Tensor mean(Graph& g, const Tensor& a);

/// Row-wise max with the argmax taken at the lowest index among ties.
/// Result is m x 1; the gradient flows only to the argmax cell.
Tensor max_rows(Graph& g, const Tensor& a);
/// Column-wise max, result 1 x n; same tie rule as max_rows.
Tensor max_cols(Graph& g, const Tensor& a);

Tensor softmax_rows(Graph& g, const Tensor& a);
Tensor log_softmax_rows(Graph& g, const Tensor& a);
/// Euclidean projection of each row onto the probability simplex.
Tensor sparsemax_rows(Graph& g, const Tensor& logits);
/// Gumbel-Softmax of each row of a probability matrix with the given noise,
/// which is treated as a constant. Probabilities are floored at 1e-12 before
/// the log.
Tensor gumbel_softmax_rows(Graph& g, const Tensor& probs, const Tensor& noise,
                           double tau);
/// Row-wise x / max(||x||, 1e-12).
Tensor l2_normalize_rows(Graph& g, const Tensor& a);
Tensor layer_norm_rows(Graph& g, const Tensor& a, const Tensor& gamma,
                       const Tensor& beta, double eps = 1e-5);

/// Rows of `table` selected by `ids`.
Tensor gather_rows(Graph& g, const Tensor& table,
                   std::span<const std::int32_t> ids);
/// Element a(i, ids[i]) of each row, as an m x 1 column.
Tensor pick(Graph& g, const Tensor& a, std::span<const std::int32_t> ids);

Tensor slice_rows(Graph& g, const Tensor& a, std::size_t begin,
                  std::size_t count);
Tensor slice_cols(Graph& g, const Tensor& a, std::size_t begin,
                  std::size_t count);
Tensor concat_rows(Graph& g, std::span<const Tensor> parts);
Tensor concat_cols(Graph& g, std::span<const Tensor> parts);

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.

/// Builds a scalar (1x1) tensor from a point. Called once on a recording
/// graph for the analytic gradient and repeatedly on value-only graphs for
/// the central differences.
using ScalarFunction = std::function<Tensor(Graph&, const Tensor&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

/// Thrown when the function is not finite at a probe point.
class GradCheckError : public std::runtime_error {
 public:
  GradCheckError(const std::string& what, std::size_t index)
      : std::runtime_error(what), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

/// max_i |analytic_i - central_i| / max(1, |analytic_i|) using central
/// differences with the given step.
GradCheckResult grad_check(const ScalarFunction& f, const Tensor& point,
                           double step = 1e-5);

}  // namespace berttune::ad
