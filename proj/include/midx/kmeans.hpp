#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <thread>
#include <vector>

#include "midx/common.hpp"

namespace midx {

struct KMeansResult {
  Matrix centroids;                    // K x dim
  std::vector<std::uint32_t> assignments;
  std::vector<double> objective_trace;  // SSE after each assignment step
  std::size_t iterations = 0;
  bool converged = false;

  double objective() const {
    return objective_trace.empty() ? 0.0 : objective_trace.back();
  }
};

namespace detail {

// Nearest centroid per point; ties go to the lowest index. Returns the SSE.
inline double assign_points(const Matrix& points, const Matrix& centroids,
                            std::vector<std::uint32_t>& out) {
  const std::size_t n = points.rows();
  out.resize(n);
  const unsigned workers =
      static_cast<unsigned>(std::min<std::size_t>(default_thread_count(), n / 4096 + 1));
  std::vector<double> partial(workers, 0.0);
  auto work = [&](unsigned w) {
    const std::size_t lo = n * w / workers, hi = n * (w + 1) / workers;
    double sse = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      const auto p = points.row(i);
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t arg = 0;
      for (std::size_t k = 0; k < centroids.rows(); ++k) {
        const double d = squared_distance(p, centroids.row(k));
        if (d < best) {
          best = d;
          arg = static_cast<std::uint32_t>(k);
        }
      }
      out[i] = arg;
      sse += best;
    }
    partial[w] = sse;
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }
  double sse = 0.0;
  for (double s : partial) sse += s;  // fixed reduction order
  return sse;
}

// Centroids become cluster means. Empty clusters are reseeded with the point
// farthest from its own centroid, each reseed taking a distinct point.
inline void update_centroids(const Matrix& points, const std::vector<std::uint32_t>& assign,
                             Matrix& centroids) {
  const std::size_t k_count = centroids.rows(), dim = centroids.cols();
  Matrix sums(k_count, dim, 0.0);
  std::vector<std::size_t> sizes(k_count, 0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    auto s = sums.row(assign[i]);
    const auto p = points.row(i);
    for (std::size_t d = 0; d < dim; ++d) s[d] += p[d];
    ++sizes[assign[i]];
  }
  std::vector<std::uint32_t> empty;
  for (std::size_t k = 0; k < k_count; ++k) {
    if (sizes[k] == 0) {
      empty.push_back(static_cast<std::uint32_t>(k));
      continue;
    }
    auto c = centroids.row(k);
    const auto s = sums.row(k);
    for (std::size_t d = 0; d < dim; ++d) c[d] = s[d] / static_cast<double>(sizes[k]);
  }
  if (empty.empty()) return;

  std::vector<std::pair<double, std::size_t>> far;
  far.reserve(points.rows());
  for (std::size_t i = 0; i < points.rows(); ++i)
    far.emplace_back(squared_distance(points.row(i), centroids.row(assign[i])), i);
  std::stable_sort(far.begin(), far.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t e = 0; e < empty.size(); ++e) {
    const std::size_t src = far[e % far.size()].second;
    std::ranges::copy(points.row(src), centroids.row(empty[e]).begin());
  }
}

inline Matrix kmeanspp_seed(const Matrix& points, std::size_t k_count, Rng& rng) {
  const std::size_t n = points.rows();
  Matrix centroids(k_count, points.cols());
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::ranges::copy(points.row(pick(rng)), centroids.row(0).begin());
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(points.row(i), centroids.row(0));
  for (std::size_t k = 1; k < k_count; ++k) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t chosen = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      chosen = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        target -= d2[i];
        if (target < 0.0 && d2[i] > 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = pick(rng);  // every point coincides with a centroid already
    }
    std::ranges::copy(points.row(chosen), centroids.row(k).begin());
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], squared_distance(points.row(i), centroids.row(k)));
  }
  return centroids;
}

}  // namespace detail

/// Lloyd's k-means with k-means++ seeding.
///
/// Stops once an assignment step reproduces the previous assignments or
/// after `max_iters` steps. On return every point is assigned to its nearest
/// centroid (ties to the lowest index) and `objective_trace` is
/// non-increasing.
///
/// A warm start supplies previous assignments instead of a seed: the initial
/// centroids are the cluster means of `points` under those assignments (the
/// given fallback centroids are kept for clusters that come out empty), and
/// reproducing the warm assignments on the first step counts as convergence.
inline KMeansResult kmeans(const Matrix& points, std::size_t k_count, std::size_t max_iters,
                           std::uint64_t seed,
                           const std::vector<std::uint32_t>* warm_assignments = nullptr,
                           const Matrix* warm_centroids = nullptr) {
  if (k_count == 0) throw Error("kmeans: K must be at least 1");
  if (points.rows() == 0) throw Error("kmeans: no points");
  if (points.cols() == 0) throw Error("kmeans: zero-dimensional points");

  KMeansResult r;
  std::vector<std::uint32_t> prev;
  if (warm_assignments != nullptr) {
    if (warm_assignments->size() != points.rows() || warm_centroids == nullptr ||
        warm_centroids->rows() != k_count || warm_centroids->cols() != points.cols())
      throw Error("kmeans: warm start shape mismatch");
    r.centroids = *warm_centroids;
    prev = *warm_assignments;
    // Means of the new points under the old partition; empty clusters keep
    // their old centroid rather than being reseeded.
    Matrix sums(k_count, points.cols(), 0.0);
    std::vector<std::size_t> sizes(k_count, 0);
    for (std::size_t i = 0; i < points.rows(); ++i) {
      const auto k = prev[i];
      if (k >= k_count) throw Error("kmeans: warm assignment out of range");
      auto s = sums.row(k);
      const auto p = points.row(i);
      for (std::size_t d = 0; d < s.size(); ++d) s[d] += p[d];
      ++sizes[k];
    }
    for (std::size_t k = 0; k < k_count; ++k) {
      if (sizes[k] == 0) continue;
      auto c = r.centroids.row(k);
      for (std::size_t d = 0; d < c.size(); ++d)
        c[d] = sums(k, d) / static_cast<double>(sizes[k]);
    }
  } else {
    Rng rng(seed);
    r.centroids = detail::kmeanspp_seed(points, k_count, rng);
  }

  std::vector<std::uint32_t> cur;
  for (std::size_t it = 0; it < max_iters; ++it) {
    r.objective_trace.push_back(detail::assign_points(points, r.centroids, cur));
    ++r.iterations;
    if (!prev.empty() && cur == prev) {
      r.converged = true;
      break;
    }
    detail::update_centroids(points, cur, r.centroids);
    prev = cur;
  }
  if (!r.converged) {
    // Keep the nearest-centroid invariant against the final centroids.
    r.objective_trace.push_back(detail::assign_points(points, r.centroids, cur));
    r.converged = (cur == prev);
  }
  r.assignments = std::move(cur);
  return r;
}

}  // namespace midx
