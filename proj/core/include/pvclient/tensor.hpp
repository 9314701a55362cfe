#pragma once

// Dense 64-bit tensors (rank <= 3) with a reverse-mode gradient tape.
//
// Every op returns a new Tensor. When any input requires a gradient (and no
// NoGradGuard is active) the result records its inputs and a backward rule, so
// the graph of live Tensors *is* the tape. backward() walks it once in reverse
// topological order.
//
// Rank-3 tensors are read as a batch of matrices: matmul, transpose, softmax
// and the row statistics act on the trailing two (or one) dimensions.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pvclient::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

enum class OpKind : std::uint8_t {
  Leaf,
  MatMul,
  Transpose,
  Softmax,
  RowMean,
  RowStd,
  Add,
  Sub,
  Mul,
  Div,
  Scale,
  Relu,
  AddRows,
  SubRows,
  MulRows,
  DivRows,
  Sum,
  Mean,
  TakeLast,
  Reshape,
};

const char* op_name(OpKind kind);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t dim(int axis) const;  // negative axes count from the back

  std::span<const double> data() const;
  // Only leaves may be written in place (optimizer updates, test perturbation).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;
  double at(std::size_t b, std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;  // empty when no gradient was received
  void zero_grad();

  OpKind op() const;
  std::vector<Tensor> inputs() const;

  // Value copy cut off from the tape.
  Tensor detach() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend struct TensorAccess;
};

// While alive, ops on this thread do not record tape entries.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// a[..., m, k] * b[..., k, n]. A rank-2 b is shared across a's batch.
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the trailing two dimensions (Permute(1,0) on each matrix).
Tensor permute10(const Tensor& x);
Tensor softmax_rows(const Tensor& x);

struct RowStats {
  Tensor mean;
  Tensor std;
};
// Statistics over the last dimension; std = sqrt(population variance + eps).
RowStats rowwise_mean_std(const Tensor& x, double eps);

// Elementwise with trailing broadcast: b is a scalar or its shape is a suffix of
// a's shape (full shape, bias vectors, per-matrix constants).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);

// Per-row broadcast: v holds one value per row of a, i.e. v's shape is a suffix
// of a.shape()[:-1].
Tensor add_rows(const Tensor& a, const Tensor& v);
Tensor sub_rows(const Tensor& a, const Tensor& v);
Tensor mul_rows(const Tensor& a, const Tensor& v);
Tensor div_rows(const Tensor& a, const Tensor& v);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Gathers entries of the last dimension: x[..., n] -> x[..., indices].
Tensor take_last(const Tensor& x, const std::vector<std::size_t>& indices);
Tensor reshape(const Tensor& x, Shape shape);

// Accumulates dloss/dt into every requires_grad tensor reachable from loss.
void backward(const Tensor& loss);

namespace debug {
// Flips the sign of one op's backward rule. Used to prove the gradient checks
// catch a broken rule; never set outside tests and the selfcheck mutation mode.
void inject_backward_fault(OpKind kind);
void clear_backward_fault();
}  // namespace debug

}  // namespace pvclient::ad
