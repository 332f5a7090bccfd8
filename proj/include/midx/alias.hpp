#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "midx/common.hpp"

namespace midx {

/// Vose alias table: O(n) construction, O(1) draws from a fixed multinomial.
///
/// Zero-weight outcomes keep their slot (with zero mass) so that outcome
/// indices stay stable identifiers for buckets and codewords.
class AliasTable {
 public:
  struct Cell {
    double prob;          // threshold for keeping the column's own outcome
    std::uint32_t alias;  // outcome taken when the coin exceeds prob
  };

  AliasTable() = default;

  explicit AliasTable(std::span<const double> weights) { build(weights); }

  std::size_t size() const noexcept { return cells_.size(); }
  bool empty() const noexcept { return cells_.empty(); }
  double total_weight() const noexcept { return total_; }
  std::span<const Cell> cells() const noexcept { return cells_; }

  /// One uniform column pick plus one coin flip.
  template <class URBG>
  std::uint32_t draw(URBG& rng) const {
    std::uniform_int_distribution<std::uint32_t> column(
        0, static_cast<std::uint32_t>(cells_.size() - 1));
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const std::uint32_t j = column(rng);
    const Cell& c = cells_[j];
    return coin(rng) < c.prob ? j : c.alias;
  }

  /// Per-outcome mass implied by the table, summed cell by cell.
  std::vector<double> reconstruct() const {
    const double n = static_cast<double>(cells_.size());
    std::vector<double> mass(cells_.size(), 0.0);
    for (std::size_t j = 0; j < cells_.size(); ++j) {
      mass[j] += cells_[j].prob / n;
      mass[cells_[j].alias] += (1.0 - cells_[j].prob) / n;
    }
    return mass;
  }

 private:
  void build(std::span<const double> weights) {
    if (weights.empty()) throw Error("alias table: empty weight vector");
    double total = 0.0;
    for (double w : weights) {
      if (!std::isfinite(w) || w < 0.0)
        throw Error("alias table: weights must be finite and non-negative");
      total += w;
    }
    if (!(total > 0.0)) throw Error("alias table: all weights are zero");
    total_ = total;

    const std::size_t n = weights.size();
    const double scale = static_cast<double>(n) / total;
    std::vector<double> scaled(n);
    std::vector<std::uint32_t> small, large;
    small.reserve(n);
    large.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      scaled[i] = weights[i] * scale;
      (scaled[i] < 1.0 ? small : large).push_back(static_cast<std::uint32_t>(i));
    }

    cells_.assign(n, Cell{1.0, 0});
    for (std::size_t i = 0; i < n; ++i) cells_[i].alias = static_cast<std::uint32_t>(i);

    while (!small.empty() && !large.empty()) {
      const std::uint32_t s = small.back();
      small.pop_back();
      const std::uint32_t l = large.back();
      cells_[s] = Cell{scaled[s], l};
      // Subtract the donated mass as (scaled[l] - 1) + scaled[s]: the first
      // difference is exact for values in [1, 2], which keeps drift small.
      scaled[l] = (scaled[l] - 1.0) + scaled[s];
      if (scaled[l] < 1.0) {
        large.pop_back();
        small.push_back(l);
      }
    }
    // Leftovers carry only rounding residue; they keep their own outcome.
    for (std::uint32_t l : large) cells_[l] = Cell{1.0, l};
    for (std::uint32_t s : small) {
      // A zero-weight outcome must never keep its own column.
      if (weights[s] == 0.0) {
        cells_[s] = Cell{0.0, fallback_outcome(weights)};
      } else {
        cells_[s] = Cell{1.0, s};
      }
    }
  }

  static std::uint32_t fallback_outcome(std::span<const double> weights) {
    std::uint32_t best = 0;
    for (std::size_t i = 1; i < weights.size(); ++i)
      if (weights[i] > weights[best]) best = static_cast<std::uint32_t>(i);
    return best;
  }

  std::vector<Cell> cells_;
  double total_ = 0.0;
};

}  // namespace midx
