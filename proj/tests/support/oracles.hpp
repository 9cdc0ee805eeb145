#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

// Reference implementations written independently of the library code, and
// seeded generators for property tests.
namespace outfit::oracle {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal(double sigma = 1.0) { return std::normal_distribution<double>(0.0, sigma)(rng_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  int bit() { return static_cast<int>(index(2)); }

  std::vector<double> vec(std::size_t n, double sigma = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = normal(sigma);
    return v;
  }

  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[index(i)]);
    return p;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

inline double euclid(const std::vector<double>& a, const std::vector<double>& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (long double)(a[i] - b[i]) * (a[i] - b[i]);
  return static_cast<double>(std::sqrt(s));
}

// Fraction of positive/negative pairs ordered correctly, ties worth 0.5.
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double good = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) good += 1.0;
      else if (scores[i] == scores[j]) good += 0.5;
    }
  }
  return good / static_cast<double>(pairs);
}

inline double binary_cross_entropy(double p, int label) {
  p = std::clamp(p, 1e-7, 1.0 - 1e-7);
  return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

// Full sort of (distance, id) over the whole pool.
inline std::vector<std::pair<std::string, double>> brute_knn(
    const std::vector<std::string>& ids, const std::vector<std::vector<double>>& points,
    const std::vector<double>& target, std::size_t k) {
  std::vector<std::pair<double, std::string>> all;
  for (std::size_t i = 0; i < ids.size(); ++i) all.emplace_back(euclid(points[i], target), ids[i]);
  std::sort(all.begin(), all.end());
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < std::min(k, all.size()); ++i) out.emplace_back(all[i].second, all[i].first);
  return out;
}

// Sorts the pool by distance, ground truth placed after any tie, and reports
// the ground truth's 1-based position.
inline std::size_t rerank_position(std::vector<double> others, double gt) {
  std::vector<std::pair<double, int>> pool;
  for (double d : others) pool.emplace_back(d, 0);
  pool.emplace_back(gt, 1);
  std::sort(pool.begin(), pool.end());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].second == 1) return i + 1;
  }
  return pool.size();
}

inline std::map<std::size_t, double> recall_from_positions(const std::vector<long>& positions,
                                                           const std::vector<std::size_t>& ks) {
  std::map<std::size_t, double> out;
  for (std::size_t k : ks) {
    std::size_t hits = 0;
    for (long p : positions) {
      if (p > 0 && static_cast<std::size_t>(p) <= k) ++hits;
    }
    out[k] = positions.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(positions.size());
  }
  return out;
}

// Set-wise ranking loss written out term by term on plain vectors.
inline double ranking_loss(const std::vector<double>& t, const std::vector<double>& p,
                           const std::vector<std::vector<double>>& negatives, double margin) {
  const double dp = euclid(t, p);
  double all = 0.0;
  double closest = 1e300;
  for (const auto& n : negatives) {
    const double dn = euclid(t, n);
    all += std::max(0.0, dp - dn + margin);
    closest = std::min(closest, dn);
  }
  return all / static_cast<double>(negatives.size()) + std::max(0.0, dp - closest + margin);
}

}  // namespace outfit::oracle
