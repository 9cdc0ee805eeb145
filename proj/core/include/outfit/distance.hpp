#pragma once

#include <cstdint>
#include <span>

#include "outfit/nn/tensor.hpp"

namespace outfit {

enum class DistanceKind { Euclidean, SquaredEuclidean };

// The one distance definition shared by the ranking loss, the index and the
// evaluation code.
double distance(std::span<const double> a, std::span<const double> b,
                DistanceKind kind = DistanceKind::Euclidean);

// Differentiable variant over two equally sized tensors. The Euclidean
// gradient at a == b is taken to be zero.
nn::Var distance(const nn::Var& a, const nn::Var& b, DistanceKind kind = DistanceKind::Euclidean);

// Process-wide count of distance evaluations (both variants).
std::uint64_t distance_evaluations();
void reset_distance_evaluations();

}  // namespace outfit
