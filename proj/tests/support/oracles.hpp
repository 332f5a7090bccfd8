#pragma once

// Test-only reference computations. Nothing here goes through the library's
// stage tables or alias machinery.

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "midx/common.hpp"

namespace midx::testing {

// Softmax of z . q_i accumulated in long double.
inline std::vector<double> brute_softmax(std::span<const double> z, const Matrix& emb,
                                         std::span<const double> extra_log = {}) {
  std::vector<long double> logit(emb.rows());
  long double mx = -INFINITY;
  for (std::size_t i = 0; i < emb.rows(); ++i) {
    long double s = 0;
    for (std::size_t d = 0; d < z.size(); ++d) s += (long double)z[d] * emb(i, d);
    if (!extra_log.empty()) s += extra_log[i];
    logit[i] = s;
    mx = std::max(mx, s);
  }
  long double total = 0;
  for (auto& v : logit) {
    v = std::exp(v - mx);
    total += v;
  }
  std::vector<double> p(emb.rows());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<double>(logit[i] / total);
  return p;
}

struct ChiSquare {
  double statistic = 0.0;
  double critical = 0.0;
  std::size_t dof = 0;
  bool zero_mass_hit = false;
  bool pass() const { return !zero_mass_hit && statistic <= critical; }
};

// Pearson goodness of fit of `counts` against `probs` at level `alpha`.
// Bins with expected count below 5 are pooled; an observation in a
// zero-probability bin fails outright.
inline ChiSquare chi_square_gof(std::span<const std::size_t> counts,
                                std::span<const double> probs, double alpha = 0.01) {
  std::size_t n = 0;
  for (auto c : counts) n += c;
  ChiSquare r;
  double pooled_exp = 0.0, pooled_obs = 0.0;
  std::size_t bins = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double e = probs[i] * static_cast<double>(n);
    if (probs[i] <= 0.0) {
      if (counts[i] > 0) r.zero_mass_hit = true;
      continue;
    }
    if (e < 5.0) {
      pooled_exp += e;
      pooled_obs += static_cast<double>(counts[i]);
      continue;
    }
    const double diff = static_cast<double>(counts[i]) - e;
    r.statistic += diff * diff / e;
    ++bins;
  }
  if (pooled_exp > 0.0) {
    const double diff = pooled_obs - pooled_exp;
    r.statistic += diff * diff / pooled_exp;
    ++bins;
  }
  r.dof = bins > 1 ? bins - 1 : 1;
  boost::math::chi_squared dist(static_cast<double>(r.dof));
  r.critical = boost::math::quantile(boost::math::complement(dist, alpha));
  return r;
}

// Central difference of f at x[i].
inline double central_diff(const std::function<double()>& f, double& x, double h = 1e-6) {
  const double orig = x;
  x = orig + h;
  const double fp = f();
  x = orig - h;
  const double fm = f();
  x = orig;
  return (fp - fm) / (2.0 * h);
}

inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Item embeddings with cluster structure (a "trained-like" geometry): a few
// centers plus isotropic noise.
inline Matrix clustered_embeddings(std::size_t m, std::size_t dim, std::size_t clusters,
                                   double spread, Rng& rng) {
  const Matrix centers = gaussian_matrix(clusters, dim, rng);
  std::uniform_int_distribution<std::size_t> pick(0, clusters - 1);
  std::normal_distribution<double> noise(0.0, spread);
  Matrix out(m, dim);
  for (std::size_t i = 0; i < m; ++i) {
    const auto c = centers.row(pick(rng));
    for (std::size_t d = 0; d < dim; ++d) out(i, d) = c[d] + noise(rng);
  }
  return out;
}

}  // namespace midx::testing
