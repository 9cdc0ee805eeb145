#include "outfit/distance.hpp"

#include <atomic>
#include <cmath>

#include "outfit/errors.hpp"

namespace outfit {

namespace {

std::atomic<std::uint64_t> g_evaluations{0};

double squared(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw InputError("distance: dimension mismatch " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace

double distance(std::span<const double> a, std::span<const double> b, DistanceKind kind) {
  g_evaluations.fetch_add(1, std::memory_order_relaxed);
  const double sq = squared(a, b);
  return kind == DistanceKind::Euclidean ? std::sqrt(sq) : sq;
}

nn::Var distance(const nn::Var& a, const nn::Var& b, DistanceKind kind) {
  const double value = distance(a.value().data(), b.value().data(), kind);
  return nn::make_op("distance", nn::Tensor::scalar(value), {a, b}, [kind, value](nn::Node& node) {
    const nn::Tensor& A = node.inputs[0]->value;
    const nn::Tensor& B = node.inputs[1]->value;
    double coeff = 0.0;
    if (kind == DistanceKind::SquaredEuclidean) {
      coeff = 2.0 * node.grad[0];
    } else if (value > 0.0) {
      coeff = node.grad[0] / value;
    }
    if (coeff == 0.0) return;
    if (node.inputs[0]->requires_grad) {
      auto& g = node.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < A.size(); ++i) g[i] += coeff * (A[i] - B[i]);
    }
    if (node.inputs[1]->requires_grad) {
      auto& g = node.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < A.size(); ++i) g[i] -= coeff * (A[i] - B[i]);
    }
  });
}

std::uint64_t distance_evaluations() { return g_evaluations.load(std::memory_order_relaxed); }

void reset_distance_evaluations() { g_evaluations.store(0, std::memory_order_relaxed); }

}  // namespace outfit
