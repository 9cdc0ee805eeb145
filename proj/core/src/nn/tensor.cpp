#include "outfit/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "outfit/errors.hpp"

namespace outfit::nn {

namespace {

thread_local bool g_grad_enabled = true;

#ifdef NDEBUG
bool g_finite_checks = false;
#else
bool g_finite_checks = true;
#endif

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

// Accumulate `delta` into the gradient of input i, when that input wants one.
Tensor* grad_of(Node& node, std::size_t i) {
  Node& in = *node.inputs[i];
  if (!in.requires_grad) return nullptr;
  return &in.grad_buffer();
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

// ---- Tensor -------------------------------------------------------------

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (product(shape_) != data_.size()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}, 0.0); }

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged rows in Tensor::from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::rows() const {
  if (shape_.size() <= 1) return 1;
  return data_.size() / shape_.back();
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 1;
  return shape_.back();
}

std::span<const double> Tensor::row_span(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(shape_));
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---- Node / Var ---------------------------------------------------------

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var Var::leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

Var Var::constant(Tensor value) { return leaf(std::move(value), false); }

void Var::zero_grad() {
  if (!node_->grad.empty()) node_->grad.fill(0.0);
}

Var Var::detach() const { return constant(node_->value); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void set_finite_checks(bool on) { g_finite_checks = on; }
bool finite_checks() { return g_finite_checks; }

Var make_op(const char* name, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (g_finite_checks && !value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + name);
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = name;
  const bool needs =
      g_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Var& v) {
        return v.requires_grad();
      });
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.shared());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

void backward(const Var& root) {
  if (root.value().size() != 1) {
    throw DimensionError("backward() needs a single-element root, got " +
                         shape_string(root.shape()));
  }
  if (!root.requires_grad()) return;

  // Post-order DFS: every node appears after all of its inputs.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  visited.insert(root.node());
  stack.emplace_back(root.node(), 0);
  while (!stack.empty()) {
    Node* n = stack.back().first;
    const std::size_t i = stack.back().second;
    if (i < n->inputs.size()) {
      ++stack.back().second;
      Node* child = n->inputs[i].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (Node* n : order) {
    if (!n->inputs.empty()) {
      n->inputs.clear();
      n->backward = nullptr;
    }
  }
}

// ---- linear algebra -----------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  require(B.rows() == k, "matmul: inner dimensions differ " + shape_string(A.shape()) + " · " +
                             shape_string(B.shape()));
  Tensor C = Tensor::zeros(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double* c = &C.at(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A.at(i, p);
      const double* brow = &B.data()[p * n];
      for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
  }
  return make_op("matmul", std::move(C), {a, b}, [m, k, n](Node& node) {
    const Tensor& dC = node.grad;
    const Tensor& A = node.inputs[0]->value;
    const Tensor& B = node.inputs[1]->value;
    if (Tensor* dA = grad_of(node, 0)) {
      // dA = dC · Bᵀ
      for (std::size_t i = 0; i < m; ++i) {
        const double* dc = &dC.data()[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = &B.data()[p * n];
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += dc[j] * brow[j];
          dA->storage()[i * k + p] += acc;
        }
      }
    }
    if (Tensor* dB = grad_of(node, 1)) {
      // dB = Aᵀ · dC
      for (std::size_t i = 0; i < m; ++i) {
        const double* dc = &dC.data()[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A.storage()[i * k + p];
          double* db = &dB->storage()[p * n];
          for (std::size_t j = 0; j < n; ++j) db[j] += av * dc[j];
        }
      }
    }
  });
}

Var transpose(const Var& a) {
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor T = Tensor::zeros(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) T.at(j, i) = A.at(i, j);
  return make_op("transpose", std::move(T), {a}, [m, n](Node& node) {
    if (Tensor* dA = grad_of(node, 0)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dA->storage()[i * n + j] += node.grad.at(j, i);
    }
  });
}

Var reshape(const Var& a, std::vector<std::size_t> shape) {
  Tensor out(std::move(shape), a.value().storage());
  return make_op("reshape", std::move(out), {a}, [](Node& node) {
    if (Tensor* dA = grad_of(node, 0)) {
      for (std::size_t i = 0; i < node.grad.size(); ++i) (*dA)[i] += node.grad[i];
    }
  });
}

// ---- elementwise --------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op("add", std::move(out), {a, b}, [](Node& node) {
    for (std::size_t s = 0; s < 2; ++s) {
      if (Tensor* d = grad_of(node, s)) {
        for (std::size_t i = 0; i < node.grad.size(); ++i) (*d)[i] += node.grad[i];
      }
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op("sub", std::move(out), {a, b}, [](Node& node) {
    if (Tensor* d = grad_of(node, 0)) {
      for (std::size_t i = 0; i < node.grad.size(); ++i) (*d)[i] += node.grad[i];
    }
    if (Tensor* d = grad_of(node, 1)) {
      for (std::size_t i = 0; i < node.grad.size(); ++i) (*d)[i] -= node.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op("mul", std::move(out), {a, b}, [](Node& node) {
    const Tensor& A = node.inputs[0]->value;
    const Tensor& B = node.inputs[1]->value;
    if (Tensor* d = grad_of(node, 0)) {
      for (std::size_t i = 0; i < node.grad.size(); ++i) (*d)[i] += node.grad[i] * B[i];
    }
    if (Tensor* d = grad_of(node, 1)) {
      for (std::size_t i = 0; i < node.grad.size(); ++i) (*d)[i] += node.grad[i] * A[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v *= factor;
  return make_op("scale", std::move(out), {a}, [factor](Node& node) {
    if (Tensor* d = grad_of(node, 0)) {
      for (std::size_t i = 0; i < node.grad.size(); ++i) (*d)[i] += node.grad[i] * factor;
    }
  });
}

Var add_scalar(const Var& a, double c) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v += c;
  return make_op("add_scalar", std::move(out), {a}, [](Node& node) {
    if (Tensor* d = grad_of(node, 0)) {
      for (std::size_t i = 0; i < node.grad.size(); ++i) (*d)[i] += node.grad[i];
    }
  });
}

Var add_row(const Var& a, const Var& row) {
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  require(row.value().size() == n, "add_row: row of size " + std::to_string(row.value().size()) +
                                       " against " + std::to_string(n) + " columns");
  Tensor out = A;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += row.value()[j];
  return make_op("add_row", std::move(out), {a, row}, [m, n](Node& node) {
    if (Tensor* d = grad_of(node, 0)) {
      for (std::size_t i = 0; i < node.grad.size(); ++i) (*d)[i] += node.grad[i];
    }
    if (Tensor* d = grad_of(node, 1)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*d)[j] += node.grad.at(i, j);
    }
  });
}

Var gelu(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return make_op("gelu", std::move(out), {a}, [](Node& node) {
    if (Tensor* d = grad_of(node, 0)) {
      const Tensor& X = node.inputs[0]->value;
      for (std::size_t i = 0; i < node.grad.size(); ++i) {
        const double x = X[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        (*d)[i] += node.grad[i] * (cdf + x * pdf);
      }
    }
  });
}

Var sigmoid(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.storage()) {
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  Tensor saved = out;
  return make_op("sigmoid", std::move(out), {a}, [saved = std::move(saved)](Node& node) {
    if (Tensor* d = grad_of(node, 0)) {
      for (std::size_t i = 0; i < node.grad.size(); ++i) {
        (*d)[i] += node.grad[i] * saved[i] * (1.0 - saved[i]);
      }
    }
  });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v = v > 0.0 ? v : 0.0;
  return make_op("relu", std::move(out), {a}, [](Node& node) {
    if (Tensor* d = grad_of(node, 0)) {
      const Tensor& X = node.inputs[0]->value;
      for (std::size_t i = 0; i < node.grad.size(); ++i) {
        if (X[i] > 0.0) (*d)[i] += node.grad[i];
      }
    }
  });
}

Var log(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v = std::log(v);
  return make_op("log", std::move(out), {a}, [](Node& node) {
    if (Tensor* d = grad_of(node, 0)) {
      const Tensor& X = node.inputs[0]->value;
      for (std::size_t i = 0; i < node.grad.size(); ++i) (*d)[i] += node.grad[i] / X[i];
    }
  });
}

Var sqrt(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v = std::sqrt(v);
  Tensor saved = out;
  return make_op("sqrt", std::move(out), {a}, [saved = std::move(saved)](Node& node) {
    if (Tensor* d = grad_of(node, 0)) {
      for (std::size_t i = 0; i < node.grad.size(); ++i) {
        (*d)[i] += node.grad[i] * 0.5 / saved[i];
      }
    }
  });
}

// ---- row-wise normalisers -----------------------------------------------

Var softmax_rows(const Var& a) {
  const Tensor& X = a.value();
  const std::size_t m = X.rows(), n = X.cols();
  Tensor Y = X;
  for (std::size_t i = 0; i < m; ++i) {
    double* y = &Y.at(i, 0);
    double mx = y[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, y[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(y[j] - mx);
      total += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= total;
  }
  Tensor saved = Y;
  return make_op("softmax", std::move(Y), {a}, [m, n, saved = std::move(saved)](Node& node) {
    if (Tensor* d = grad_of(node, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = &saved.data()[i * n];
        const double* g = &node.grad.data()[i * n];
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) d->storage()[i * n + j] += y[j] * (g[j] - dot);
      }
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& X = x.value();
  const std::size_t m = X.rows(), n = X.cols();
  require(n >= 1, "layer_norm: empty feature dimension");
  require(gamma.value().size() == n && beta.value().size() == n,
          "layer_norm: gamma/beta must have " + std::to_string(n) + " entries");
  Tensor xhat = X;
  std::vector<double> rstd(m);
  for (std::size_t i = 0; i < m; ++i) {
    double* r = &xhat.at(i, 0);
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += r[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (r[j] - mu) * (r[j] - mu);
    var /= static_cast<double>(n);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) r[j] = (r[j] - mu) * rstd[i];
  }
  Tensor Y = xhat;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      Y.at(i, j) = xhat.at(i, j) * gamma.value()[j] + beta.value()[j];

  return make_op("layer_norm", std::move(Y), {x, gamma, beta},
                 [m, n, xhat = std::move(xhat), rstd = std::move(rstd)](Node& node) {
                   const Tensor& G = node.inputs[1]->value;
                   const Tensor& dY = node.grad;
                   if (Tensor* dX = grad_of(node, 0)) {
                     std::vector<double> dxhat(n);
                     for (std::size_t i = 0; i < m; ++i) {
                       double mean_d = 0.0, mean_dx = 0.0;
                       for (std::size_t j = 0; j < n; ++j) {
                         dxhat[j] = dY.at(i, j) * G[j];
                         mean_d += dxhat[j];
                         mean_dx += dxhat[j] * xhat.at(i, j);
                       }
                       mean_d /= static_cast<double>(n);
                       mean_dx /= static_cast<double>(n);
                       for (std::size_t j = 0; j < n; ++j) {
                         dX->at(i, j) += rstd[i] * (dxhat[j] - mean_d - xhat.at(i, j) * mean_dx);
                       }
                     }
                   }
                   if (Tensor* dG = grad_of(node, 1)) {
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) (*dG)[j] += dY.at(i, j) * xhat.at(i, j);
                   }
                   if (Tensor* dB = grad_of(node, 2)) {
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) (*dB)[j] += dY.at(i, j);
                   }
                 });
}

// ---- structural ---------------------------------------------------------

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    require(p.cols() == n, "concat_rows: column counts differ");
    m += p.rows();
  }
  std::vector<double> data;
  data.reserve(m * n);
  for (const auto& p : parts) {
    const auto& s = p.value().storage();
    data.insert(data.end(), s.begin(), s.end());
  }
  return make_op("concat_rows", Tensor({m, n}, std::move(data)), parts, [](Node& node) {
    std::size_t offset = 0;
    for (std::size_t s = 0; s < node.inputs.size(); ++s) {
      const std::size_t len = node.inputs[s]->value.size();
      if (Tensor* d = grad_of(node, s)) {
        for (std::size_t i = 0; i < len; ++i) (*d)[i] += node.grad[offset + i];
      }
      offset += len;
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    require(p.rows() == m, "concat_cols: row counts differ");
    n += p.cols();
  }
  Tensor out = Tensor::zeros(m, n);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < c; ++j) out.at(i, offset + j) = p.value().at(i, j);
    offset += c;
  }
  return make_op("concat_cols", std::move(out), parts, [m, n](Node& node) {
    std::size_t offset = 0;
    for (std::size_t s = 0; s < node.inputs.size(); ++s) {
      const std::size_t c = node.inputs[s]->value.cols();
      if (Tensor* d = grad_of(node, s)) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < c; ++j) (*d)[i * c + j] += node.grad[i * n + offset + j];
      }
      offset += c;
    }
  });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
  const std::size_t n = a.cols();
  require(begin + count <= a.rows(), "slice_rows: range out of bounds");
  const auto& s = a.value().storage();
  std::vector<double> data(s.begin() + static_cast<std::ptrdiff_t>(begin * n),
                           s.begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  return make_op("slice_rows", Tensor({count, n}, std::move(data)), {a},
                 [begin, n](Node& node) {
                   if (Tensor* d = grad_of(node, 0)) {
                     for (std::size_t i = 0; i < node.grad.size(); ++i)
                       (*d)[begin * n + i] += node.grad[i];
                   }
                 });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t count) {
  const std::size_t m = a.rows(), n = a.cols();
  require(begin + count <= n, "slice_cols: range out of bounds");
  Tensor out = Tensor::zeros(m, count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out.at(i, j) = a.value().at(i, begin + j);
  return make_op("slice_cols", std::move(out), {a}, [m, n, begin, count](Node& node) {
    if (Tensor* d = grad_of(node, 0)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) (*d)[i * n + begin + j] += node.grad[i * count + j];
    }
  });
}

Var gather_rows(const Var& a, std::span<const std::size_t> indices) {
  const std::size_t n = a.cols();
  Tensor out = Tensor::zeros(indices.size(), n);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    require(indices[r] < a.rows(), "gather_rows: index out of bounds");
    for (std::size_t j = 0; j < n; ++j) out.at(r, j) = a.value().at(indices[r], j);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_op("gather_rows", std::move(out), {a}, [n, idx = std::move(idx)](Node& node) {
    if (Tensor* d = grad_of(node, 0)) {
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < n; ++j) (*d)[idx[r] * n + j] += node.grad[r * n + j];
    }
  });
}

// ---- reductions ---------------------------------------------------------

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().storage()) total += v;
  return make_op("sum", Tensor::scalar(total), {a}, [](Node& node) {
    if (Tensor* d = grad_of(node, 0)) {
      const double g = node.grad[0];
      for (auto& v : d->storage()) v += g;
    }
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var min_of(const std::vector<Var>& scalars) {
  require(!scalars.empty(), "min_of: no inputs");
  std::size_t best = 0;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    require(scalars[i].value().size() == 1, "min_of: inputs must be scalars");
    if (scalars[i].item() < scalars[best].item()) best = i;
  }
  return make_op("min_of", Tensor::scalar(scalars[best].item()), scalars, [best](Node& node) {
    if (Tensor* d = grad_of(node, best)) (*d)[0] += node.grad[0];
  });
}

// ---- convolution --------------------------------------------------------

Var conv2d(const Var& x, const Var& weight, const Var& bias, std::size_t height,
           std::size_t width, std::size_t kernel) {
  const std::size_t hw = height * width;
  const std::size_t c_in = x.rows();
  const std::size_t c_out = weight.rows();
  const std::size_t patch = c_in * kernel * kernel;
  require(x.cols() == hw, "conv2d: input has " + std::to_string(x.cols()) + " pixels, expected " +
                              std::to_string(hw));
  require(weight.cols() == patch, "conv2d: weight patch size mismatch");
  require(bias.value().size() == c_out, "conv2d: bias size mismatch");
  const long pad = static_cast<long>(kernel / 2);

  // im2col: [patch × hw]
  Tensor col = Tensor::zeros(patch, hw);
  for (std::size_t c = 0; c < c_in; ++c)
    for (std::size_t ky = 0; ky < kernel; ++ky)
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        const std::size_t prow = (c * kernel + ky) * kernel + kx;
        for (std::size_t y = 0; y < height; ++y) {
          const long sy = static_cast<long>(y) + static_cast<long>(ky) - pad;
          if (sy < 0 || sy >= static_cast<long>(height)) continue;
          for (std::size_t xx = 0; xx < width; ++xx) {
            const long sx = static_cast<long>(xx) + static_cast<long>(kx) - pad;
            if (sx < 0 || sx >= static_cast<long>(width)) continue;
            col.at(prow, y * width + xx) =
                x.value().at(c, static_cast<std::size_t>(sy) * width + static_cast<std::size_t>(sx));
          }
        }
      }

  Tensor out = Tensor::zeros(c_out, hw);
  for (std::size_t o = 0; o < c_out; ++o) {
    double* orow = &out.at(o, 0);
    for (std::size_t p = 0; p < patch; ++p) {
      const double w = weight.value().at(o, p);
      const double* crow = &col.data()[p * hw];
      for (std::size_t j = 0; j < hw; ++j) orow[j] += w * crow[j];
    }
    for (std::size_t j = 0; j < hw; ++j) orow[j] += bias.value()[o];
  }

  return make_op(
      "conv2d", std::move(out), {x, weight, bias},
      [=, col = std::move(col)](Node& node) {
        const Tensor& dOut = node.grad;
        const Tensor& W = node.inputs[1]->value;
        if (Tensor* dW = grad_of(node, 1)) {
          for (std::size_t o = 0; o < c_out; ++o)
            for (std::size_t p = 0; p < patch; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < hw; ++j) acc += dOut.at(o, j) * col.at(p, j);
              dW->at(o, p) += acc;
            }
        }
        if (Tensor* dB = grad_of(node, 2)) {
          for (std::size_t o = 0; o < c_out; ++o)
            for (std::size_t j = 0; j < hw; ++j) (*dB)[o] += dOut.at(o, j);
        }
        if (Tensor* dX = grad_of(node, 0)) {
          for (std::size_t c = 0; c < c_in; ++c)
            for (std::size_t ky = 0; ky < kernel; ++ky)
              for (std::size_t kx = 0; kx < kernel; ++kx) {
                const std::size_t prow = (c * kernel + ky) * kernel + kx;
                for (std::size_t y = 0; y < height; ++y) {
                  const long sy = static_cast<long>(y) + static_cast<long>(ky) - pad;
                  if (sy < 0 || sy >= static_cast<long>(height)) continue;
                  for (std::size_t xx = 0; xx < width; ++xx) {
                    const long sx = static_cast<long>(xx) + static_cast<long>(kx) - pad;
                    if (sx < 0 || sx >= static_cast<long>(width)) continue;
                    double acc = 0.0;
                    for (std::size_t o = 0; o < c_out; ++o)
                      acc += W.at(o, prow) * dOut.at(o, y * width + xx);
                    dX->at(c, static_cast<std::size_t>(sy) * width + static_cast<std::size_t>(sx)) +=
                        acc;
                  }
                }
              }
        }
      });
}

Var avg_pool2(const Var& x, std::size_t height, std::size_t width) {
  require(x.cols() == height * width, "avg_pool2: pixel count mismatch");
  require(height % 2 == 0 && width % 2 == 0, "avg_pool2: odd spatial extent");
  const std::size_t channels = x.rows();
  const std::size_t oh = height / 2, ow = width / 2;
  Tensor out = Tensor::zeros(channels, oh * ow);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        double acc = 0.0;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx)
            acc += x.value().at(c, (2 * y + dy) * width + 2 * xx + dx);
        out.at(c, y * ow + xx) = 0.25 * acc;
      }
  return make_op("avg_pool2", std::move(out), {x}, [=](Node& node) {
    if (Tensor* d = grad_of(node, 0)) {
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xx = 0; xx < ow; ++xx) {
            const double g = 0.25 * node.grad.at(c, y * ow + xx);
            for (std::size_t dy = 0; dy < 2; ++dy)
              for (std::size_t dx = 0; dx < 2; ++dx)
                d->at(c, (2 * y + dy) * width + 2 * xx + dx) += g;
          }
    }
  });
}

// ---- gradient check -----------------------------------------------------

double grad_check(const std::function<Var()>& f, std::span<Var> leaves, double step) {
  for (auto& leaf : leaves) leaf.zero_grad();
  const Var y = f();
  if (!y.value().all_finite()) throw NumericError("grad_check: non-finite function value");
  backward(y);

  double worst = 0.0;
  NoGradGuard no_grad;
  for (auto& leaf : leaves) {
    Tensor analytic = leaf.has_grad() ? leaf.grad() : Tensor(leaf.shape(), 0.0);
    auto& values = leaf.mutable_value().storage();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + step;
      const double up = f().item();
      values[i] = original - step;
      const double down = f().item();
      values[i] = original;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("grad_check: non-finite value under perturbation");
      }
      const double fd = (up - down) / (2.0 * step);
      const double ad = analytic[i];
      const double denom = std::max({1.0, std::abs(ad), std::abs(fd)});
      worst = std::max(worst, std::abs(ad - fd) / denom);
    }
  }
  return worst;
}

}  // namespace outfit::nn
