#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "midx/common.hpp"
#include "midx/dataset.hpp"
#include "midx/quantizer.hpp"
#include "midx/sampler.hpp"

namespace midx {

/// KL(p || q) in nats, with 0 log 0 = 0. Throws when p puts mass where q
/// has none.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw Error("kl_divergence: size mismatch");
  // Kahan-compensated sum; terms can cancel when p and q are close.
  double sum = 0.0, comp = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0)
      throw Error("kl_divergence: infinite divergence (p > 0 where q = 0 at index " +
                  std::to_string(i) + ")");
    const double term = p[i] * std::log(p[i] / q[i]) - comp;
    const double t = sum + term;
    comp = (t - sum) - term;
    sum = t;
  }
  return sum;
}

inline double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw Error("total_variation: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return std::min(1.0, 0.5 * s);
}

// Closed-form proposal laws computed from the embeddings themselves: the
// quantized logit z . (q_i - residual_i), optionally plus log pop(i). These
// do not go through the stage tables.
inline std::vector<double> quantized_logits(std::span<const double> z, const Matrix& embeddings,
                                            const MultiIndex& index) {
  check_query(z, index);
  if (embeddings.rows() != index.num_items() || embeddings.cols() != index.dim)
    throw Error("embeddings do not match the index");
  std::vector<double> logits(embeddings.rows());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto q = embeddings.row(i);
    const auto r = index.residuals.row(i);
    double s = 0.0;
    for (std::size_t d = 0; d < q.size(); ++d) s += z[d] * (q[d] - r[d]);
    logits[i] = s;
  }
  return logits;
}

inline std::vector<double> closed_form_uni(std::span<const double> z, const Matrix& embeddings,
                                           const MultiIndex& index) {
  return softmax(quantized_logits(z, embeddings, index));
}

inline std::vector<double> closed_form_pop(std::span<const double> z, const Matrix& embeddings,
                                           const MultiIndex& index,
                                           const PopularityVector& pop) {
  auto logits = quantized_logits(z, embeddings, index);
  if (pop.weights.size() != logits.size()) throw Error("popularity vector size mismatch");
  for (std::size_t i = 0; i < logits.size(); ++i)
    logits[i] += pop.weights[i] > 0.0 ? std::log(pop.weights[i]) : kNegInf;
  return softmax(logits);
}

struct DivergenceReport {
  double kl = 0.0;
  double tv = 0.0;
  double bound = 0.0;
  bool bound_satisfied = true;
  double c_max = 0.0;
  double z_norm = 0.0;
};

inline constexpr double kBoundSlack = 1e-9;

/// KL(Q_uni || softmax) against the bound 2 C ||z||, C the realized max
/// residual norm.
inline DivergenceReport verify_bound_uni(std::span<const double> z, const MultiIndex& index,
                                         const Matrix& embeddings) {
  const auto q_uni = closed_form_uni(z, embeddings, index);
  const auto q_soft = softmax_oracle(z, embeddings);
  DivergenceReport r;
  r.kl = kl_divergence(q_uni, q_soft);
  r.tv = total_variation(q_uni, q_soft);
  r.c_max = index.max_residual_norm;
  r.z_norm = norm(z);
  r.bound = 2.0 * r.c_max * r.z_norm;
  r.bound_satisfied = r.kl <= r.bound + kBoundSlack;
  return r;
}

/// KL(Q_pop || softmax) against 2 C ||z|| + log(max pop / min pop). The
/// bound needs strictly positive popularity.
inline DivergenceReport verify_bound_pop(std::span<const double> z, const MultiIndex& index,
                                         const Matrix& embeddings, const PopularityVector& pop) {
  if (pop.weights.empty()) throw Error("verify_bound_pop: empty popularity");
  const auto [lo, hi] = std::ranges::minmax(pop.weights);
  if (!(lo > 0.0))
    throw Error("verify_bound_pop: popularity must be strictly positive for the bound");
  const auto q_pop = closed_form_pop(z, embeddings, index, pop);
  const auto q_soft = softmax_oracle(z, embeddings);
  DivergenceReport r;
  r.kl = kl_divergence(q_pop, q_soft);
  r.tv = total_variation(q_pop, q_soft);
  r.c_max = index.max_residual_norm;
  r.z_norm = norm(z);
  r.bound = 2.0 * r.c_max * r.z_norm + std::log(hi / lo);
  r.bound_satisfied = r.kl <= r.bound + kBoundSlack;
  return r;
}

struct CurvePoint {
  std::size_t rank;  // 1-based
  double cumulative;
};

/// Cumulative mass along `order` (e.g. items by descending popularity).
inline std::vector<CurvePoint> cumulative_curve(std::span<const double> dist,
                                                std::span<const ItemId> order) {
  if (order.size() != dist.size()) throw Error("cumulative_curve: order/dist size mismatch");
  std::vector<CurvePoint> out;
  out.reserve(order.size());
  double acc = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    acc += dist[order[r]];
    out.push_back({r + 1, acc});
  }
  return out;
}

/// Empirical version from drawn samples.
inline std::vector<CurvePoint> cumulative_curve(std::span<const Sample> samples,
                                                std::span<const ItemId> order) {
  std::vector<double> freq(order.size(), 0.0);
  for (const auto& s : samples) {
    if (s.item >= freq.size()) throw Error("cumulative_curve: sample item out of range");
    freq[s.item] += 1.0;
  }
  if (!samples.empty())
    for (double& f : freq) f /= static_cast<double>(samples.size());
  return cumulative_curve(std::span<const double>(freq), order);
}

/// Items sorted by descending popularity count, ties by id.
inline std::vector<ItemId> popularity_order(const PopularityVector& pop) {
  std::vector<ItemId> order(pop.counts.size());
  std::iota(order.begin(), order.end(), ItemId{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](ItemId a, ItemId b) { return pop.counts[a] > pop.counts[b]; });
  return order;
}

inline double max_curve_gap(std::span<const CurvePoint> a, std::span<const CurvePoint> b) {
  if (a.size() != b.size()) throw Error("max_curve_gap: size mismatch");
  double gap = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    gap = std::max(gap, std::abs(a[i].cumulative - b[i].cumulative));
  return gap;
}

}  // namespace midx
