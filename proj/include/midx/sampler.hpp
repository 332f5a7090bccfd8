#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "midx/alias.hpp"
#include "midx/common.hpp"
#include "midx/dataset.hpp"
#include "midx/quantizer.hpp"

namespace midx {

enum class SamplerKind { exact, uni, pop, uniform, popularity };

inline std::string to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::exact: return "exact";
    case SamplerKind::uni: return "uni";
    case SamplerKind::pop: return "pop";
    case SamplerKind::uniform: return "uniform";
    case SamplerKind::popularity: return "popularity";
  }
  return "?";
}

inline SamplerKind parse_sampler_kind(std::string_view s) {
  if (s == "exact") return SamplerKind::exact;
  if (s == "uni") return SamplerKind::uni;
  if (s == "pop") return SamplerKind::pop;
  if (s == "uniform") return SamplerKind::uniform;
  if (s == "popularity") return SamplerKind::popularity;
  throw UsageError("unknown sampler kind '" + std::string(s) +
                   "' (expected exact, uni, pop, uniform or popularity)");
}

inline bool uses_index(SamplerKind k) {
  return k == SamplerKind::exact || k == SamplerKind::uni || k == SamplerKind::pop;
}

struct Sample {
  ItemId item;
  double log_q;  // log proposal probability of `item`
};

/// Softmax over inner-product logits z . q_i for every row of `embeddings`.
inline std::vector<double> softmax_oracle(std::span<const double> z, const Matrix& embeddings) {
  if (z.size() != embeddings.cols()) throw Error("softmax_oracle: dimension mismatch");
  std::vector<double> logits(embeddings.rows());
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = dot(z, embeddings.row(i));
  return softmax(logits);
}

/// Query-independent third-stage tables shared by all MIDX_Uni / MIDX_Pop
/// contexts built over one index.
struct BucketTables {
  SamplerKind kind = SamplerKind::uni;
  std::vector<double> log_cell_weight;  // log |cell| (uni) or log sum pop (pop); -inf if zero
  std::vector<AliasTable> cell_tables;  // pop: over bucket positions; empty if zero mass
  std::vector<double> log_within;       // pop: per item log(pop_i / cell pop)
};

inline std::shared_ptr<const BucketTables> uniform_buckets(const MultiIndex& index) {
  auto t = std::make_shared<BucketTables>();
  t->kind = SamplerKind::uni;
  t->log_cell_weight.resize(index.num_cells());
  for (std::size_t c = 0; c < index.num_cells(); ++c) {
    const auto n = index.bucket_size(c);
    t->log_cell_weight[c] = n == 0 ? kNegInf : std::log(static_cast<double>(n));
  }
  return t;
}

inline std::shared_ptr<const BucketTables> popularity_buckets(const MultiIndex& index,
                                                              const PopularityVector& pop) {
  if (pop.weights.size() != index.num_items())
    throw Error("popularity vector has " + std::to_string(pop.weights.size()) +
                " entries, index has " + std::to_string(index.num_items()) + " items");
  bool any = false;
  for (double w : pop.weights) {
    if (!std::isfinite(w) || w < 0.0) throw Error("popularity weights must be finite and >= 0");
    any = any || w > 0.0;
  }
  if (!any) throw Error("popularity weights are all zero");

  auto t = std::make_shared<BucketTables>();
  t->kind = SamplerKind::pop;
  t->log_cell_weight.assign(index.num_cells(), kNegInf);
  t->cell_tables.resize(index.num_cells());
  t->log_within.assign(index.num_items(), kNegInf);
  std::vector<double> w;
  for (std::size_t c = 0; c < index.num_cells(); ++c) {
    const auto items = index.bucket(c / index.codebook_size, c % index.codebook_size);
    w.clear();
    double total = 0.0;
    for (ItemId i : items) {
      w.push_back(pop.weights[i]);
      total += pop.weights[i];
    }
    if (!(total > 0.0)) continue;
    t->log_cell_weight[c] = std::log(total);
    t->cell_tables[c] = AliasTable(w);
    for (ItemId i : items)
      if (pop.weights[i] > 0.0) t->log_within[i] = std::log(pop.weights[i]) - std::log(total);
  }
  return t;
}

// Single-stage tables for the static uniform and popularity baselines.
struct FlatTable {
  std::size_t num_items = 0;
  AliasTable table;           // popularity only
  std::vector<double> log_q;  // popularity only
};

class SamplerContext;
inline SamplerContext prepare_exact(std::span<const double> z, const MultiIndex& index);
inline SamplerContext prepare_midx(std::span<const double> z, const MultiIndex& index,
                                   std::shared_ptr<const BucketTables> buckets);
inline SamplerContext static_sampler(SamplerKind kind, std::size_t num_items,
                              const PopularityVector* pop = nullptr);

/// Per-query proposal: stage-1 and stage-2 alias tables over codewords plus
/// the stage-3 within-bucket distribution, with every stage also kept in log
/// space so log Q of any item is available in O(1).
///
/// MIDX contexts refer to the index they were prepared from, which must
/// outlive them.
class SamplerContext {
 public:
  SamplerKind kind() const noexcept { return kind_; }
  std::size_t num_items() const noexcept {
    return index_ != nullptr ? index_->num_items() : flat_->num_items;
  }

  /// log Q(item | z) under this context's three-stage (or flat) law.
  double log_prob(ItemId item) const {
    switch (kind_) {
      case SamplerKind::uniform:
        return -std::log(static_cast<double>(flat_->num_items));
      case SamplerKind::popularity:
        return flat_->log_q[item];
      default:
        break;
    }
    const std::size_t cell = index_->cell_of(item);
    const double head = log_p1_[index_->code1[item]] + log_p2_[cell];
    switch (kind_) {
      case SamplerKind::exact: return clamp_log(head + log_p3_[item]);
      case SamplerKind::uni: return clamp_log(head - buckets_->log_cell_weight[cell]);
      default: return clamp_log(head + buckets_->log_within[item]);
    }
  }

  std::vector<double> probabilities() const {
    std::vector<double> p(num_items());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(log_prob(static_cast<ItemId>(i)));
    return p;
  }

  template <class URBG>
  Sample draw(URBG& rng) const {
    switch (kind_) {
      case SamplerKind::uniform: {
        std::uniform_int_distribution<ItemId> pick(0, static_cast<ItemId>(flat_->num_items - 1));
        return {pick(rng), -std::log(static_cast<double>(flat_->num_items))};
      }
      case SamplerKind::popularity: {
        const ItemId i = flat_->table.draw(rng);
        return {i, flat_->log_q[i]};
      }
      default:
        break;
    }
    const std::uint32_t k1 = stage1_.draw(rng);
    const std::uint32_t k2 = stage2_[k1].draw(rng);
    const std::size_t cell = static_cast<std::size_t>(k1) * index_->codebook_size + k2;
    const std::uint64_t base = index_->bucket_offsets[cell];
    const double head = log_p1_[k1] + log_p2_[cell];
    if (kind_ == SamplerKind::uni) {
      const auto n = index_->bucket_offsets[cell + 1] - base;
      std::uniform_int_distribution<std::uint64_t> pick(0, n - 1);
      const ItemId item = index_->bucket_items[base + pick(rng)];
      return {item, clamp_log(head - buckets_->log_cell_weight[cell])};
    }
    const auto& table =
        kind_ == SamplerKind::exact ? stage3_[cell] : buckets_->cell_tables[cell];
    const ItemId item = index_->bucket_items[base + table.draw(rng)];
    const double tail =
        kind_ == SamplerKind::exact ? log_p3_[item] : buckets_->log_within[item];
    return {item, clamp_log(head + tail)};
  }

  // Stage views, mainly for verification.
  double log_stage1(std::size_t k1) const { return log_p1_.at(k1); }
  double log_stage2(std::size_t k1, std::size_t k2) const {
    return log_p2_.at(k1 * index_->codebook_size + k2);
  }
  std::span<const double> log_psi() const noexcept { return log_psi_; }
  std::span<const double> log_omega() const noexcept { return log_omega_; }
  std::span<const double> stage3_log_probs() const noexcept { return log_p3_; }
  const AliasTable& stage1_table() const noexcept { return stage1_; }
  const AliasTable& stage2_table(std::size_t k1) const { return stage2_.at(k1); }

 private:
  friend SamplerContext prepare_exact(std::span<const double>, const MultiIndex&);
  friend SamplerContext prepare_midx(std::span<const double>, const MultiIndex&,
                                     std::shared_ptr<const BucketTables>);
  friend SamplerContext static_sampler(SamplerKind, std::size_t, const PopularityVector*);

  static double clamp_log(double v) noexcept { return v > 0.0 ? 0.0 : v; }

  static AliasTable table_from_logs(std::span<const double> logw) {
    double mx = kNegInf;
    for (double v : logw) mx = std::max(mx, v);
    if (mx == kNegInf) return {};
    std::vector<double> w(logw.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(logw[i] - mx);
    return AliasTable(w);
  }

  // Shared first/second stage construction from codeword scores and per-cell
  // log weights (log omega for the exact sampler, log |cell| or log pop-sum
  // for the approximate ones).
  void build_codeword_stages(std::span<const double> z, std::span<const double> log_cell) {
    const std::size_t k = index_->codebook_size, half = index_->half_dim();
    const auto z1 = z.first(half), z2 = z.subspan(half, half);
    std::vector<double> a1(k), a2(k);
    for (std::size_t j = 0; j < k; ++j) {
      a1[j] = dot(z1, index_->codebook1.row(j));
      a2[j] = dot(z2, index_->codebook2.row(j));
    }
    log_psi_.assign(k, kNegInf);
    log_p2_.assign(k * k, kNegInf);
    stage2_.assign(k, AliasTable{});
    std::vector<double> row(k);
    for (std::size_t k1 = 0; k1 < k; ++k1) {
      for (std::size_t k2 = 0; k2 < k; ++k2) row[k2] = log_cell[k1 * k + k2] + a2[k2];
      const double lpsi = logsumexp(row);
      log_psi_[k1] = lpsi;
      if (lpsi == kNegInf) continue;  // row of empty cells: zero stage-1 mass
      for (std::size_t k2 = 0; k2 < k; ++k2) log_p2_[k1 * k + k2] = row[k2] - lpsi;
      stage2_[k1] = table_from_logs(row);
    }
    std::vector<double> first(k);
    for (std::size_t k1 = 0; k1 < k; ++k1) first[k1] = log_psi_[k1] + a1[k1];
    const double lz = logsumexp(first);
    log_p1_.resize(k);
    for (std::size_t k1 = 0; k1 < k; ++k1) log_p1_[k1] = first[k1] - lz;
    stage1_ = table_from_logs(first);
  }

  SamplerKind kind_ = SamplerKind::uniform;
  const MultiIndex* index_ = nullptr;
  std::shared_ptr<const BucketTables> buckets_;
  std::shared_ptr<const FlatTable> flat_;
  AliasTable stage1_;
  std::vector<AliasTable> stage2_;
  std::vector<AliasTable> stage3_;  // exact only, per cell
  std::vector<double> log_p1_, log_p2_, log_p3_;
  std::vector<double> log_psi_, log_omega_;
};

inline void check_query(std::span<const double> z, const MultiIndex& index) {
  if (z.size() != index.dim)
    throw Error("query has dimension " + std::to_string(z.size()) + ", index expects " +
                std::to_string(index.dim));
  if (!all_finite(z)) throw Error("query vector has non-finite entries");
}

/// Exact softmax sampler. Costs one pass over all residuals (O(MD)); the
/// resulting law equals softmax_oracle(z, embeddings) up to round-off.
inline SamplerContext prepare_exact(std::span<const double> z, const MultiIndex& index) {
  check_query(z, index);
  SamplerContext ctx;
  ctx.kind_ = SamplerKind::exact;
  ctx.index_ = &index;
  const std::size_t m = index.num_items(), cells = index.num_cells();
  ctx.log_p3_.assign(m, kNegInf);
  ctx.log_omega_.assign(cells, kNegInf);
  ctx.stage3_.assign(cells, AliasTable{});
  std::vector<double> logits;
  for (std::size_t c = 0; c < cells; ++c) {
    const auto items = index.bucket(c / index.codebook_size, c % index.codebook_size);
    if (items.empty()) continue;
    logits.resize(items.size());
    for (std::size_t j = 0; j < items.size(); ++j)
      logits[j] = dot(z, index.residuals.row(items[j]));
    const double lw = logsumexp(logits);
    ctx.log_omega_[c] = lw;
    for (std::size_t j = 0; j < items.size(); ++j) ctx.log_p3_[items[j]] = logits[j] - lw;
    ctx.stage3_[c] = SamplerContext::table_from_logs(logits);
  }
  ctx.build_codeword_stages(z, ctx.log_omega_);
  return ctx;
}

/// MIDX_Uni / MIDX_Pop context: O(KD + K^2) given prebuilt bucket tables.
inline SamplerContext prepare_midx(std::span<const double> z, const MultiIndex& index,
                                   std::shared_ptr<const BucketTables> buckets) {
  check_query(z, index);
  if (!buckets || buckets->log_cell_weight.size() != index.num_cells())
    throw Error("bucket tables do not match the index");
  SamplerContext ctx;
  ctx.kind_ = buckets->kind;
  ctx.index_ = &index;
  ctx.buckets_ = std::move(buckets);
  ctx.build_codeword_stages(z, ctx.buckets_->log_cell_weight);
  return ctx;
}

inline SamplerContext prepare_uni(std::span<const double> z, const MultiIndex& index) {
  return prepare_midx(z, index, uniform_buckets(index));
}

inline SamplerContext prepare_pop(std::span<const double> z, const MultiIndex& index,
                                  const PopularityVector& pop) {
  return prepare_midx(z, index, popularity_buckets(index, pop));
}

inline SamplerContext static_sampler(SamplerKind kind, std::size_t num_items,
                                     const PopularityVector* pop) {
  if (num_items == 0) throw Error("static sampler over zero items");
  auto flat = std::make_shared<FlatTable>();
  flat->num_items = num_items;
  if (kind == SamplerKind::popularity) {
    if (pop == nullptr) throw Error("popularity sampler requires a popularity vector");
    if (pop->weights.size() != num_items) throw Error("popularity vector size mismatch");
    flat->table = AliasTable(pop->weights);
    flat->log_q.resize(num_items);
    const double log_total = std::log(flat->table.total_weight());
    for (std::size_t i = 0; i < num_items; ++i)
      flat->log_q[i] = pop->weights[i] > 0.0 ? std::log(pop->weights[i]) - log_total : kNegInf;
  } else if (kind != SamplerKind::uniform) {
    throw Error("static_sampler: kind must be uniform or popularity");
  }
  SamplerContext ctx;
  ctx.kind_ = kind;
  ctx.flat_ = std::move(flat);
  return ctx;
}

template <class URBG>
std::vector<Sample> sample_batch(const SamplerContext& ctx, std::size_t count, URBG& rng) {
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t t = 0; t < count; ++t) out.push_back(ctx.draw(rng));
  return out;
}

/// Builds per-query contexts of one kind over a fixed index. Bucket tables
/// (MIDX_Uni / MIDX_Pop) and flat tables (static kinds) are built once here
/// and shared by every prepared context.
class Proposal {
 public:
  Proposal(SamplerKind kind, const MultiIndex* index, const PopularityVector* pop,
           std::size_t num_items)
      : kind_(kind), index_(index) {
    if (uses_index(kind) && index == nullptr)
      throw Error(to_string(kind) + " sampler requires an index");
    switch (kind) {
      case SamplerKind::uni: buckets_ = uniform_buckets(*index); break;
      case SamplerKind::pop:
        if (pop == nullptr) throw Error("pop sampler requires a popularity vector");
        buckets_ = popularity_buckets(*index, *pop);
        break;
      case SamplerKind::uniform:
      case SamplerKind::popularity:
        flat_ = static_sampler(kind, num_items, pop);
        break;
      case SamplerKind::exact: break;
    }
  }

  SamplerKind kind() const noexcept { return kind_; }

  SamplerContext prepare(std::span<const double> z) const {
    switch (kind_) {
      case SamplerKind::exact: return prepare_exact(z, *index_);
      case SamplerKind::uni:
      case SamplerKind::pop: return prepare_midx(z, *index_, buckets_);
      default: return flat_;
    }
  }

 private:
  SamplerKind kind_;
  const MultiIndex* index_;
  std::shared_ptr<const BucketTables> buckets_;
  SamplerContext flat_;
};

}  // namespace midx
