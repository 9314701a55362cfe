#include "pvclient/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "pvclient/error.hpp"

namespace pvclient::ad {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  OpKind op = OpKind::Leaf;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads self.grad, accumulates into inputs that require a gradient.
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

struct TensorAccess {
  static detail::Node& node(const Tensor& t) {
    if (!t.node_) throw StateError("use of an undefined tensor");
    return *t.node_;
  }
  static const std::shared_ptr<detail::Node>& ptr(const Tensor& t) { return t.node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> n) { return Tensor(std::move(n)); }
};

namespace {

using detail::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

thread_local bool t_grad_enabled = true;
std::atomic<int> g_fault{-1};

Node& N(const Tensor& t) { return TensorAccess::node(t); }

bool wants_grad(std::initializer_list<const Tensor*> inputs) {
  if (!t_grad_enabled) return false;
  for (const Tensor* t : inputs) {
    if (N(*t).requires_grad) return true;
  }
  return false;
}

Tensor make_result(Shape shape, std::vector<double> value, OpKind op,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (wants_grad(inputs)) {
    node->requires_grad = true;
    for (const Tensor* t : inputs) node->inputs.push_back(TensorAccess::ptr(*t));
    node->backward = std::move(backward);
  }
  return TensorAccess::wrap(std::move(node));
}

void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 3) {
    throw ShapeError("tensor rank must be 1..3, got shape " + to_string(shape));
  }
  for (std::size_t extent : shape) {
    if (extent == 0) throw ShapeError("zero extent in shape " + to_string(shape));
  }
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

void check_trailing_broadcast(const Tensor& a, const Tensor& b, const char* what) {
  if (b.numel() == 1 || is_suffix(b.shape(), a.shape())) return;
  throw ShapeError(std::string(what) + ": cannot broadcast " + to_string(b.shape()) +
                   " onto " + to_string(a.shape()));
}

Shape row_shape(const Shape& shape) {
  Shape rows(shape.begin(), shape.end() - 1);
  if (rows.empty()) rows.push_back(1);
  return rows;
}

void check_row_broadcast(const Tensor& a, const Tensor& v, const char* what) {
  Shape rows(a.shape().begin(), a.shape().end() - 1);
  if (rows.empty() ? v.numel() == 1 : is_suffix(v.shape(), rows)) return;
  throw ShapeError(std::string(what) + ": per-row vector " + to_string(v.shape()) +
                   " does not match rows of " + to_string(a.shape()));
}

enum class Binary { Add, Sub, Mul, Div };

Tensor binary_trailing(const Tensor& a, const Tensor& b, Binary kind, OpKind op,
                       const char* what) {
  check_trailing_broadcast(a, b, what);
  const auto& av = a.data();
  const auto& bv = b.data();
  const std::size_t n = av.size();
  const std::size_t m = bv.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[i];
    const double y = bv[i % m];
    switch (kind) {
      case Binary::Add: out[i] = x + y; break;
      case Binary::Sub: out[i] = x - y; break;
      case Binary::Mul: out[i] = x * y; break;
      case Binary::Div: out[i] = x / y; break;
    }
  }
  return make_result(a.shape(), std::move(out), op, {&a, &b}, [kind](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const std::size_t n = self.grad.size();
    const std::size_t m = nb.value.size();
    if (na.requires_grad) {
      auto& ga = na.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const double g = self.grad[i];
        switch (kind) {
          case Binary::Add:
          case Binary::Sub: ga[i] += g; break;
          case Binary::Mul: ga[i] += g * nb.value[i % m]; break;
          case Binary::Div: ga[i] += g / nb.value[i % m]; break;
        }
      }
    }
    if (nb.requires_grad) {
      auto& gb = nb.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const double g = self.grad[i];
        const std::size_t j = i % m;
        switch (kind) {
          case Binary::Add: gb[j] += g; break;
          case Binary::Sub: gb[j] -= g; break;
          case Binary::Mul: gb[j] += g * na.value[i]; break;
          case Binary::Div: {
            const double y = nb.value[j];
            gb[j] -= g * na.value[i] / (y * y);
            break;
          }
        }
      }
    }
  });
}

Tensor binary_rows(const Tensor& a, const Tensor& v, Binary kind, OpKind op, const char* what) {
  check_row_broadcast(a, v, what);
  const auto& av = a.data();
  const auto& vv = v.data();
  const std::size_t cols = a.shape().back();
  const std::size_t m = vv.size();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double x = av[i];
    const double y = vv[(i / cols) % m];
    switch (kind) {
      case Binary::Add: out[i] = x + y; break;
      case Binary::Sub: out[i] = x - y; break;
      case Binary::Mul: out[i] = x * y; break;
      case Binary::Div: out[i] = x / y; break;
    }
  }
  return make_result(a.shape(), std::move(out), op, {&a, &v}, [kind, cols](Node& self) {
    Node& na = *self.inputs[0];
    Node& nv = *self.inputs[1];
    const std::size_t n = self.grad.size();
    const std::size_t m = nv.value.size();
    if (na.requires_grad) {
      auto& ga = na.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const double g = self.grad[i];
        switch (kind) {
          case Binary::Add:
          case Binary::Sub: ga[i] += g; break;
          case Binary::Mul: ga[i] += g * nv.value[(i / cols) % m]; break;
          case Binary::Div: ga[i] += g / nv.value[(i / cols) % m]; break;
        }
      }
    }
    if (nv.requires_grad) {
      auto& gv = nv.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const double g = self.grad[i];
        const std::size_t j = (i / cols) % m;
        switch (kind) {
          case Binary::Add: gv[j] += g; break;
          case Binary::Sub: gv[j] -= g; break;
          case Binary::Mul: gv[j] += g * na.value[i]; break;
          case Binary::Div: {
            const double y = nv.value[j];
            gv[j] -= g * na.value[i] / (y * y);
            break;
          }
        }
      }
    }
  });
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "permute10";
    case OpKind::Softmax: return "softmax_rows";
    case OpKind::RowMean: return "row_mean";
    case OpKind::RowStd: return "row_std";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Scale: return "scale";
    case OpKind::Relu: return "relu";
    case OpKind::AddRows: return "add_rows";
    case OpKind::SubRows: return "sub_rows";
    case OpKind::MulRows: return "mul_rows";
    case OpKind::DivRows: return "div_rows";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::TakeLast: return "take_last";
    case OpKind::Reshape: return "reshape";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  const std::size_t n = ad::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (ad::numel(shape) != values.size()) {
    throw ShapeError("shape " + to_string(shape) + " needs " + std::to_string(ad::numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return N(*this).shape; }
std::size_t Tensor::numel() const { return N(*this).value.size(); }

std::size_t Tensor::dim(int axis) const {
  const auto& s = shape();
  const int r = static_cast<int>(s.size());
  const int idx = axis < 0 ? r + axis : axis;
  if (idx < 0 || idx >= r) throw ShapeError("axis out of range for shape " + to_string(s));
  return s[static_cast<std::size_t>(idx)];
}

std::span<const double> Tensor::data() const { return N(*this).value; }

std::span<double> Tensor::mutable_data() {
  Node& n = N(*this);
  if (n.op != OpKind::Leaf) throw StateError("only leaf tensors may be modified in place");
  return n.value;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar shape " + to_string(shape()));
  return data()[0];
}

double Tensor::at(std::size_t i) const { return data()[i]; }
double Tensor::at(std::size_t i, std::size_t j) const { return data()[i * dim(-1) + j]; }
double Tensor::at(std::size_t b, std::size_t i, std::size_t j) const {
  return data()[(b * dim(-2) + i) * dim(-1) + j];
}

bool Tensor::requires_grad() const { return N(*this).requires_grad; }
bool Tensor::has_grad() const { return !N(*this).grad.empty(); }
std::span<const double> Tensor::grad() const { return N(*this).grad; }
void Tensor::zero_grad() { N(*this).grad.clear(); }
OpKind Tensor::op() const { return N(*this).op; }

std::vector<Tensor> Tensor::inputs() const {
  std::vector<Tensor> out;
  for (const auto& in : N(*this).inputs) out.push_back(Tensor(in));
  return out;
}

Tensor Tensor::detach() const {
  const Node& n = N(*this);
  return from(n.shape, n.value, false);
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

// ---------------------------------------------------------------------------
// Ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const bool shape_ok = sa.size() >= 2 && sb.size() >= 2 && sa.back() == sb[sb.size() - 2] &&
                        (sb.size() == 2 || (sa.size() == 3 && sb[0] == sa[0]));
  if (!shape_ok) {
    throw ShapeError("matmul shape mismatch: " + to_string(sa) + " * " + to_string(sb));
  }
  const std::size_t k = sa.back();
  const std::size_t n = sb.back();
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t batch = sa.size() == 3 ? sa[0] : 1;
  const bool shared = sb.size() == 2;

  Shape out_shape = sa;
  out_shape.back() = n;
  std::vector<double> out(ad::numel(out_shape));
  const auto ad_ = a.data();
  const auto bd = b.data();
  if (shared) {
    Map(out.data(), batch * m, n).noalias() =
        MapC(ad_.data(), batch * m, k) * MapC(bd.data(), k, n);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      Map(out.data() + i * m * n, m, n).noalias() =
          MapC(ad_.data() + i * m * k, m, k) * MapC(bd.data() + i * k * n, k, n);
    }
  }
  return make_result(std::move(out_shape), std::move(out), OpKind::MatMul, {&a, &b},
                     [=](Node& self) {
                       Node& na = *self.inputs[0];
                       Node& nb = *self.inputs[1];
                       const double* g = self.grad.data();
                       if (shared) {
                         MapC G(g, batch * m, n);
                         if (na.requires_grad) {
                           Map(na.grad_buffer().data(), batch * m, k).noalias() +=
                               G * MapC(nb.value.data(), k, n).transpose();
                         }
                         if (nb.requires_grad) {
                           Map(nb.grad_buffer().data(), k, n).noalias() +=
                               MapC(na.value.data(), batch * m, k).transpose() * G;
                         }
                         return;
                       }
                       for (std::size_t i = 0; i < batch; ++i) {
                         MapC G(g + i * m * n, m, n);
                         if (na.requires_grad) {
                           Map(na.grad_buffer().data() + i * m * k, m, k).noalias() +=
                               G * MapC(nb.value.data() + i * k * n, k, n).transpose();
                         }
                         if (nb.requires_grad) {
                           Map(nb.grad_buffer().data() + i * k * n, k, n).noalias() +=
                               MapC(na.value.data() + i * m * k, m, k).transpose() * G;
                         }
                       }
                     });
}

Tensor permute10(const Tensor& x) {
  const auto& s = x.shape();
  if (s.size() < 2) throw ShapeError("permute10 needs rank >= 2, got " + to_string(s));
  const std::size_t rows = s[s.size() - 2];
  const std::size_t cols = s.back();
  const std::size_t batch = s.size() == 3 ? s[0] : 1;
  Shape out_shape = s;
  std::swap(out_shape[out_shape.size() - 2], out_shape.back());
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    Map(out.data() + b * rows * cols, cols, rows) =
        MapC(xd.data() + b * rows * cols, rows, cols).transpose();
  }
  return make_result(std::move(out_shape), std::move(out), OpKind::Transpose, {&x},
                     [=](Node& self) {
                       Node& nx = *self.inputs[0];
                       auto& gx = nx.grad_buffer();
                       for (std::size_t b = 0; b < batch; ++b) {
                         Map(gx.data() + b * rows * cols, rows, cols) +=
                             MapC(self.grad.data() + b * rows * cols, cols, rows).transpose();
                       }
                     });
}

Tensor softmax_rows(const Tensor& x) {
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  const auto xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * cols;
    double* o = out.data() + r * cols;
    const double peak = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - peak);
      total += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  return make_result(x.shape(), std::move(out), OpKind::Softmax, {&x}, [=](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* g = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += y[c] * (g[c] - dot);
    }
  });
}

RowStats rowwise_mean_std(const Tensor& x, double eps) {
  if (!(eps >= 0.0)) throw ConfigError("rowwise_mean_std: eps must be >= 0");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  const auto xd = x.data();
  std::vector<double> mu(rows);
  std::vector<double> sd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * cols;
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += in[c];
    const double m = s / static_cast<double>(cols);
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += (in[c] - m) * (in[c] - m);
    mu[r] = m;
    sd[r] = std::sqrt(ss / static_cast<double>(cols) + eps);
  }
  const Shape rs = row_shape(x.shape());
  Tensor mean_t = make_result(rs, mu, OpKind::RowMean, {&x}, [=](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    const double inv = 1.0 / static_cast<double>(cols);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += self.grad[r] * inv;
    }
  });
  Tensor std_t = make_result(rs, std::move(sd), OpKind::RowStd, {&x},
                             [=, mu = std::move(mu)](Node& self) {
                               Node& nx = *self.inputs[0];
                               auto& gx = nx.grad_buffer();
                               const double n = static_cast<double>(cols);
                               for (std::size_t r = 0; r < rows; ++r) {
                                 const double k = self.grad[r] / (n * self.value[r]);
                                 for (std::size_t c = 0; c < cols; ++c) {
                                   gx[r * cols + c] += k * (nx.value[r * cols + c] - mu[r]);
                                 }
                               }
                             });
  return {std::move(mean_t), std::move(std_t)};
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_trailing(a, b, Binary::Add, OpKind::Add, "add");
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_trailing(a, b, Binary::Sub, OpKind::Sub, "sub");
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_trailing(a, b, Binary::Mul, OpKind::Mul, "mul");
}
Tensor div(const Tensor& a, const Tensor& b) {
  return binary_trailing(a, b, Binary::Div, OpKind::Div, "div");
}

Tensor add_rows(const Tensor& a, const Tensor& v) {
  return binary_rows(a, v, Binary::Add, OpKind::AddRows, "add_rows");
}
Tensor sub_rows(const Tensor& a, const Tensor& v) {
  return binary_rows(a, v, Binary::Sub, OpKind::SubRows, "sub_rows");
}
Tensor mul_rows(const Tensor& a, const Tensor& v) {
  return binary_rows(a, v, Binary::Mul, OpKind::MulRows, "mul_rows");
}
Tensor div_rows(const Tensor& a, const Tensor& v) {
  return binary_rows(a, v, Binary::Div, OpKind::DivRows, "div_rows");
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= factor;
  return make_result(x.shape(), std::move(out), OpKind::Scale, {&x}, [factor](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * self.grad[i];
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return make_result(x.shape(), std::move(out), OpKind::Relu, {&x}, [](Node& self) {
    Node& nx = *self.inputs[0];
    auto& gx = nx.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (nx.value[i] > 0.0) gx[i] += self.grad[i];
    }
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result({1}, {total}, OpKind::Sum, {&x}, [](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (double& g : gx) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  const double n = static_cast<double>(x.numel());
  return make_result({1}, {total / n}, OpKind::Mean, {&x}, [n](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (double& g : gx) g += self.grad[0] / n;
  });
}

Tensor take_last(const Tensor& x, const std::vector<std::size_t>& indices) {
  const std::size_t cols = x.shape().back();
  if (indices.empty()) throw ShapeError("take_last: empty index list");
  for (std::size_t idx : indices) {
    if (idx >= cols) {
      throw ShapeError("take_last: index " + std::to_string(idx) + " out of range for " +
                       to_string(x.shape()));
    }
  }
  const std::size_t rows = x.numel() / cols;
  const std::size_t k = indices.size();
  Shape out_shape = x.shape();
  out_shape.back() = k;
  std::vector<double> out(rows * k);
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = xd[r * cols + indices[j]];
  }
  return make_result(std::move(out_shape), std::move(out), OpKind::TakeLast, {&x},
                     [=](Node& self) {
                       auto& gx = self.inputs[0]->grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t j = 0; j < k; ++j) {
                           gx[r * cols + indices[j]] += self.grad[r * k + j];
                         }
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  check_shape(shape);
  if (ad::numel(shape) != x.numel()) {
    throw ShapeError("reshape " + to_string(x.shape()) + " -> " + to_string(shape) +
                     " changes element count");
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), OpKind::Reshape, {&x}, [](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

void backward(const Tensor& loss) {
  Node& root = N(loss);
  if (root.value.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + to_string(root.shape));
  }
  if (!root.requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{&root, 0}};
  visited.insert(&root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && !visited.contains(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  // Interior gradients are per-pass; leaves accumulate across calls.
  for (Node* node : order) {
    if (node->op != OpKind::Leaf) node->grad.assign(node->value.size(), 0.0);
  }
  root.grad_buffer()[0] += 1.0;

  const int fault = g_fault.load(std::memory_order_relaxed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward) continue;
    if (fault == static_cast<int>(node->op)) {
      for (double& g : node->grad) g = -g;
    }
    node->backward(*node);
  }
  // Free interior buffers; only leaves keep what they received.
  for (Node* node : order) {
    if (node->op != OpKind::Leaf) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

namespace debug {
void inject_backward_fault(OpKind kind) { g_fault.store(static_cast<int>(kind)); }
void clear_backward_fault() { g_fault.store(-1); }
}  // namespace debug

}  // namespace pvclient::ad
