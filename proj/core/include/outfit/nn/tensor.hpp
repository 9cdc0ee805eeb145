#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace outfit::nn {

// Dense row-major array of doubles. Rank 0 and 1 tensors behave as a single
// row when viewed as a matrix; higher ranks fold every leading extent into rows.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor row(std::vector<double> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  std::span<const double> row_span(std::size_t r) const;

  // Value of a single-element tensor.
  double item() const;
  bool all_finite() const;
  void fill(double v);

  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

struct Node;
using BackwardFn = std::function<void(Node&)>;

// One record of the computation graph. Non-leaf nodes keep their inputs alive
// until backward runs, after which the edges are released.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  // Lazily allocated, zero-initialised gradient buffer shaped like value.
  Tensor& grad_buffer();
};

// Handle onto a graph node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var leaf(Tensor value, bool requires_grad = true);
  static Var constant(Tensor value);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad();
  bool requires_grad() const { return node_->requires_grad; }
  const std::vector<std::size_t>& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  double item() const { return node_->value.item(); }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

  // Same value, cut from the graph.
  Var detach() const;

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording on the current thread while alive.
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

// When on, every op result is scanned for NaN/Inf and NumericError is thrown.
// Defaults to on in debug builds.
void set_finite_checks(bool on);
bool finite_checks();

// Builds a result node. If recording is disabled or no input requires a
// gradient, the result is a constant and `backward` is dropped.
Var make_op(const char* name, Tensor value, std::vector<Var> inputs, BackwardFn backward);

// Reverse-mode sweep from a single-element root. Each reachable node is
// visited once in reverse topological order; gradients accumulate into
// leaves. Intermediate edges are released afterwards.
void backward(const Var& root);

// ---- operations --------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double c);
// a[m×n] + row[1×n] broadcast over rows.
Var add_row(const Var& a, const Var& row);
Var transpose(const Var& a);
Var reshape(const Var& a, std::vector<std::size_t> shape);

Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);

// Row-wise softmax with max subtraction.
Var softmax_rows(const Var& a);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);

Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& a, std::size_t begin, std::size_t count);
Var slice_cols(const Var& a, std::size_t begin, std::size_t count);
Var gather_rows(const Var& a, std::span<const std::size_t> indices);

Var sum(const Var& a);
Var mean(const Var& a);
// Smallest of a list of scalars; the gradient flows to the first minimiser.
Var min_of(const std::vector<Var>& scalars);

// Single-image 2-D convolution, stride 1, zero padding kernel/2.
// x: [C_in × H·W], weight: [C_out × C_in·k·k], bias: [1 × C_out] -> [C_out × H·W].
Var conv2d(const Var& x, const Var& weight, const Var& bias, std::size_t height,
           std::size_t width, std::size_t kernel);
// 2×2 average pooling. x: [C × H·W] -> [C × (H/2)·(W/2)].
Var avg_pool2(const Var& x, std::size_t height, std::size_t width);

// ---- gradient verification ----------------------------------------------

// Central finite differences against autodiff for a scalar function of the
// given leaves. Returns max over coordinates of
// |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
double grad_check(const std::function<Var()>& f, std::span<Var> leaves, double step = 1e-5);

}  // namespace outfit::nn
