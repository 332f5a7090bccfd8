#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "midx/alias.hpp"
#include "midx/common.hpp"
#include "midx/dataset.hpp"
#include "midx/quantizer.hpp"
#include "midx/sampler.hpp"

namespace midx {

struct BenchReport {
  std::string kind;
  std::size_t num_items = 0, codebook_size = 0, dim = 0, sample_count = 0;
  double prepare_ns = 0.0;   // median per-query context preparation
  double per_draw_ns = 0.0;  // median per single draw
  double total_ns = 0.0;     // median per query: prepare + T draws
  std::size_t trials = 0;
  bool skipped = false;
  std::string note;
};

struct BenchOptions {
  std::vector<SamplerKind> kinds{SamplerKind::uniform, SamplerKind::popularity,
                                 SamplerKind::uni, SamplerKind::pop, SamplerKind::exact};
  std::vector<std::size_t> item_grid{10'000, 100'000, 1'000'000};
  std::size_t codebook_size = 16;
  std::size_t dim = 32;
  std::size_t sample_count = 200;
  std::size_t trials = 7;
  std::size_t queries_per_trial = 20;
  std::size_t kmeans_iters = 10;
  std::uint64_t seed = 7;
  // The exact sampler allocates O(M) per query; beyond this it is skipped.
  std::size_t max_exact_items = 2'000'000;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::ranges::sort(v);
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double ns_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::nano>(Clock::now() - t0).count();
}

// Keeps results observable so the optimizer cannot drop timed work.
inline volatile std::uint64_t bench_sink = 0;

}  // namespace detail

/// Median per-query preparation and per-draw cost of each sampler kind on
/// synthetic Gaussian embeddings, for every M in the grid.
inline std::vector<BenchReport> bench_scaling(
    const BenchOptions& opt, const std::function<void(const BenchReport&)>& on_report = {}) {
  if (opt.trials < 5) throw UsageError("bench needs at least 5 trials for a median");
  std::vector<BenchReport> out;
  for (std::size_t m : opt.item_grid) {
    Rng rng(opt.seed + m);
    const Matrix emb = gaussian_matrix(m, opt.dim, rng, 1.0 / std::sqrt(double(opt.dim)));
    std::vector<std::uint64_t> counts(m);
    std::geometric_distribution<std::uint64_t> geo(0.05);
    for (auto& c : counts) c = geo(rng) + 1;
    const PopularityVector pop = PopularityVector::from_counts(counts, PopFunction::log1p);
    const bool needs_index = std::ranges::any_of(opt.kinds, uses_index);
    std::optional<MultiIndex> index;
    if (needs_index) index = build_index(emb, opt.codebook_size, opt.seed, opt.kmeans_iters);

    for (SamplerKind kind : opt.kinds) {
      BenchReport rep;
      rep.kind = to_string(kind);
      rep.num_items = m;
      rep.codebook_size = opt.codebook_size;
      rep.dim = opt.dim;
      rep.sample_count = opt.sample_count;
      if (kind == SamplerKind::exact && m > opt.max_exact_items) {
        rep.skipped = true;
        rep.note = "exact sampler skipped: M exceeds max_exact_items";
        if (on_report) on_report(rep);
        out.push_back(rep);
        continue;
      }
      const Proposal proposal(kind, index ? &*index : nullptr, &pop, m);
      std::vector<double> prep, draw, total;
      std::normal_distribution<double> normal(0.0, 1.0);
      std::vector<double> z(opt.dim);
      // One untimed warm-up query, then the timed trials.
      for (std::size_t trial = 0; trial <= opt.trials; ++trial) {
        double prep_ns = 0.0, draw_ns = 0.0;
        for (std::size_t q = 0; q < opt.queries_per_trial; ++q) {
          for (double& v : z) v = normal(rng);
          auto t0 = detail::Clock::now();
          const SamplerContext ctx = proposal.prepare(z);
          prep_ns += detail::ns_since(t0);
          t0 = detail::Clock::now();
          std::uint64_t acc = 0;
          for (std::size_t t = 0; t < opt.sample_count; ++t) acc += ctx.draw(rng).item;
          draw_ns += detail::ns_since(t0);
          detail::bench_sink = detail::bench_sink + acc;
        }
        if (trial == 0) continue;
        const double nq = static_cast<double>(opt.queries_per_trial);
        prep.push_back(prep_ns / nq);
        draw.push_back(draw_ns / nq / static_cast<double>(std::max<std::size_t>(1, opt.sample_count)));
        total.push_back((prep_ns + draw_ns) / nq);
      }
      rep.prepare_ns = median(prep);
      rep.per_draw_ns = median(draw);
      rep.total_ns = median(total);
      rep.trials = opt.trials;
      if (on_report) on_report(rep);
      out.push_back(rep);
    }
  }
  return out;
}

struct AliasBenchReport {
  std::size_t size = 0;
  double per_draw_ns = 0.0;
  std::size_t trials = 0;
};

/// Median per-draw latency of alias tables with random weights.
inline std::vector<AliasBenchReport> bench_alias(const std::vector<std::size_t>& sizes,
                                                 std::size_t draws, std::size_t trials,
                                                 std::uint64_t seed) {
  if (trials < 5) throw UsageError("bench needs at least 5 trials for a median");
  std::vector<AliasBenchReport> out;
  for (std::size_t n : sizes) {
    Rng rng(seed + n);
    std::vector<double> w(n);
    std::exponential_distribution<double> expo(1.0);
    for (double& v : w) v = expo(rng);
    const AliasTable table(w);
    std::vector<double> per;
    for (std::size_t trial = 0; trial <= trials; ++trial) {
      std::uint64_t acc = 0;
      const auto t0 = detail::Clock::now();
      for (std::size_t i = 0; i < draws; ++i) acc += table.draw(rng);
      const double ns = detail::ns_since(t0);
      detail::bench_sink = detail::bench_sink + acc;
      if (trial > 0) per.push_back(ns / static_cast<double>(draws));
    }
    out.push_back({n, median(per), trials});
  }
  return out;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchReport>& reps) {
  os << "kind,M,K,D,T,prepare_ns,per_draw_ns,total_ns,trials,skipped\n";
  for (const auto& r : reps)
    os << r.kind << ',' << r.num_items << ',' << r.codebook_size << ',' << r.dim << ','
       << r.sample_count << ',' << r.prepare_ns << ',' << r.per_draw_ns << ',' << r.total_ns
       << ',' << r.trials << ',' << (r.skipped ? 1 : 0) << '\n';
}

}  // namespace midx
