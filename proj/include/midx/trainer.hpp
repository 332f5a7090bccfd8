#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "midx/common.hpp"
#include "midx/dataset.hpp"
#include "midx/model.hpp"
#include "midx/quantizer.hpp"
#include "midx/sampler.hpp"

namespace midx {

// "full" is the exact softmax reference path; everything else is a proposal.
enum class TrainSampler { full, exact, uni, pop, uniform, popularity };

inline TrainSampler parse_train_sampler(std::string_view s) {
  if (s == "full") return TrainSampler::full;
  switch (parse_sampler_kind(s)) {
    case SamplerKind::exact: return TrainSampler::exact;
    case SamplerKind::uni: return TrainSampler::uni;
    case SamplerKind::pop: return TrainSampler::pop;
    case SamplerKind::uniform: return TrainSampler::uniform;
    case SamplerKind::popularity: return TrainSampler::popularity;
  }
  return TrainSampler::full;
}

inline std::string to_string(TrainSampler s) {
  switch (s) {
    case TrainSampler::full: return "full";
    case TrainSampler::exact: return "exact";
    case TrainSampler::uni: return "uni";
    case TrainSampler::pop: return "pop";
    case TrainSampler::uniform: return "uniform";
    case TrainSampler::popularity: return "popularity";
  }
  return "?";
}

inline SamplerKind proposal_kind(TrainSampler s) {
  switch (s) {
    case TrainSampler::exact: return SamplerKind::exact;
    case TrainSampler::uni: return SamplerKind::uni;
    case TrainSampler::pop: return SamplerKind::pop;
    case TrainSampler::popularity: return SamplerKind::popularity;
    default: return SamplerKind::uniform;
  }
}

struct TrainConfig {
  std::size_t latent_dim = 32;
  std::size_t codebook_size = 16;
  std::size_t sample_count = 200;
  TrainSampler sampler = TrainSampler::uni;
  std::size_t mc_draws = 1;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  std::size_t batch_size = 256;
  std::size_t epochs = 200;
  std::size_t index_rebuild_interval = 1;
  std::size_t kmeans_iters = 20;
  double input_dropout_prob = 0.5;
  double beta = 1.0;  // weight on the Gaussian KL term
  double init_std = 0.1;
  std::uint64_t seed = 42;
  PopFunction pop_function = PopFunction::log1p;
  std::size_t eval_k = 10;
  std::size_t eval_every = 1;  // 0 disables per-epoch evaluation

  void validate() const {
    if (latent_dim == 0) throw UsageError("latent_dim must be positive");
    if (sampler != TrainSampler::full && sample_count == 0)
      throw UsageError("sample_count must be >= 1 unless sampler_kind = full");
    const bool midx = sampler == TrainSampler::exact || sampler == TrainSampler::uni ||
                      sampler == TrainSampler::pop;
    if (midx && latent_dim % 2 != 0)
      throw UsageError("latent_dim must be even for MIDX samplers");
    if (midx && codebook_size == 0) throw UsageError("codebook_size must be positive");
    if (mc_draws == 0) throw UsageError("mc_draws must be positive");
    if (batch_size == 0) throw UsageError("batch_size must be positive");
    if (!(learning_rate >= 0.0)) throw UsageError("learning_rate must be >= 0");
    if (!(input_dropout_prob >= 0.0 && input_dropout_prob < 1.0))
      throw UsageError("input_dropout_prob must be in [0, 1)");
    if (midx && index_rebuild_interval == 0)
      throw UsageError("index_rebuild_interval must be positive");
  }
};

struct EvalReport {
  std::size_t k = 10;
  double ndcg = 0.0;
  double recall = 0.0;
  std::size_t users = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  std::optional<EvalReport> eval;
  double sample_time_ms = 0.0;
  double train_time_ms = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochRecord> trace;
  EvalReport final_eval;
};

/// NDCG@k with log2 discounts; the ideal DCG places min(k, |relevant|) hits
/// at the top. `ranked` is the ranking (best first).
inline double ndcg_at_k(std::span<const ItemId> ranked, std::span<const ItemId> relevant,
                        std::size_t k) {
  if (relevant.empty() || k == 0) return 0.0;
  double dcg = 0.0;
  const std::size_t n = std::min(k, ranked.size());
  for (std::size_t r = 0; r < n; ++r)
    if (std::ranges::binary_search(relevant, ranked[r])) dcg += 1.0 / std::log2(r + 2.0);
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, relevant.size()); ++r) idcg += 1.0 / std::log2(r + 2.0);
  return dcg / idcg;
}

/// Fraction of relevant items found in the top k. `relevant` must be sorted.
inline double recall_at_k(std::span<const ItemId> ranked, std::span<const ItemId> relevant,
                          std::size_t k) {
  if (relevant.empty()) return 0.0;
  std::size_t hits = 0;
  const std::size_t n = std::min(k, ranked.size());
  for (std::size_t r = 0; r < n; ++r)
    if (std::ranges::binary_search(relevant, ranked[r])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

/// Top-k items by score with `excluded` (sorted) masked out; ties by id.
inline std::vector<ItemId> top_k(std::span<const double> scores, std::span<const ItemId> excluded,
                                 std::size_t k) {
  std::vector<ItemId> cand;
  cand.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (!std::ranges::binary_search(excluded, static_cast<ItemId>(i)))
      cand.push_back(static_cast<ItemId>(i));
  const std::size_t n = std::min(k, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(n), cand.end(),
                    [&](ItemId a, ItemId b) {
                      return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
                    });
  cand.resize(n);
  return cand;
}

/// Ranks all items by z . q with z = mu(train history), train items masked,
/// averaging NDCG@k and Recall@k over users with a non-empty holdout.
inline EvalReport evaluate(const ModelParams& params, const InteractionDataset& ds,
                           std::size_t k) {
  if (!ds.is_split()) throw Error("evaluate: dataset has no train/holdout split");
  EvalReport rep;
  rep.k = k;
  std::vector<double> scores(params.num_items());
  for (std::size_t u = 0; u < ds.num_users; ++u) {
    if (ds.holdout[u].empty()) continue;
    const Encoding e = encode_mean(ds.train[u], params);
    for (std::size_t i = 0; i < scores.size(); ++i)
      scores[i] = dot(e.z, params.item_embeddings.row(i));
    const auto ranked = top_k(scores, ds.train[u], k);
    rep.ndcg += ndcg_at_k(ranked, ds.holdout[u], k);
    rep.recall += recall_at_k(ranked, ds.holdout[u], k);
    ++rep.users;
  }
  if (rep.users > 0) {
    rep.ndcg /= static_cast<double>(rep.users);
    rep.recall /= static_cast<double>(rep.users);
  }
  return rep;
}

/// Adam with decoupled weight decay, one moment pair per parameter block.
class AdamW {
 public:
  AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ModelParams& params, ModelParams& grads) {
    ++t_;
    std::vector<std::span<double>> p, g;
    params.for_each_block([&](std::span<double> s) { p.push_back(s); });
    grads.for_each_block([&](std::span<double> s) { g.push_back(s); });
    if (m_.empty()) {
      for (const auto& s : p) {
        m_.emplace_back(s.size(), 0.0);
        v_.emplace_back(s.size(), 0.0);
      }
    }
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t b = 0; b < p.size(); ++b) {
      auto& m = m_[b];
      auto& v = v_[b];
      for (std::size_t i = 0; i < p[b].size(); ++i) {
        m[i] = b1_ * m[i] + (1.0 - b1_) * g[b][i];
        v[i] = b2_ * v[i] + (1.0 - b2_) * g[b][i] * g[b][i];
        const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        p[b][i] -= lr_ * (update + wd_ * p[b][i]);
      }
    }
  }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

namespace detail {

inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since)
      .count();
}

inline void zero_grads(ModelParams& g) {
  g.for_each_block([](std::span<double> s) { std::ranges::fill(s, 0.0); });
}

}  // namespace detail

/// Mini-batch training of the linear-encoder VAE. Deterministic for a given
/// config and dataset. `on_epoch`, if set, sees each record as it is made.
inline TrainResult train(const InteractionDataset& ds, const TrainConfig& cfg,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (!ds.is_split()) throw Error("train: dataset has no train/holdout split");
  const std::size_t m = ds.num_items, d = cfg.latent_dim;
  Rng rng(cfg.seed);
  TrainResult res;
  res.params = ModelParams::random(m, d, rng, cfg.init_std);
  ModelParams grads = ModelParams::zeros(m, d);
  AdamW opt(cfg.learning_rate, cfg.weight_decay);

  const bool midx = cfg.sampler == TrainSampler::exact || cfg.sampler == TrainSampler::uni ||
                    cfg.sampler == TrainSampler::pop;
  const PopularityVector pop = popularity_vector(ds, cfg.pop_function);
  std::optional<MultiIndex> index;
  std::optional<Proposal> proposal;

  std::vector<std::size_t> order(ds.num_users);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    const auto epoch_start = std::chrono::steady_clock::now();

    if (cfg.sampler != TrainSampler::full) {
      const auto t0 = std::chrono::steady_clock::now();
      if (midx && (!index || (epoch - 1) % cfg.index_rebuild_interval == 0)) {
        index = index ? rebuild(*index, res.params.item_embeddings)
                      : build_index(res.params.item_embeddings, cfg.codebook_size, cfg.seed,
                                    cfg.kmeans_iters);
        proposal.emplace(proposal_kind(cfg.sampler), &*index, &pop, m);
      } else if (!proposal) {
        proposal.emplace(proposal_kind(cfg.sampler), nullptr, &pop, m);
      }
      rec.sample_time_ms += detail::elapsed_ms(t0);
    }

    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      detail::zero_grads(grads);
      for (std::size_t b = start; b < stop; ++b) {
        const auto& positives = ds.train[order[b]];
        if (positives.empty()) continue;
        Encoding e = encode(positives, res.params, rng, cfg.input_dropout_prob);
        std::vector<double> dmu(d, 0.0), dlv(d, 0.0);
        double user_loss = 0.0;
        const double inv_s = 1.0 / static_cast<double>(cfg.mc_draws);
        std::vector<double> sigma(d);
        for (std::size_t k = 0; k < d; ++k) sigma[k] = std::exp(0.5 * e.logvar[k]);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t s = 0; s < cfg.mc_draws; ++s) {
          if (s > 0)
            for (std::size_t k = 0; k < d; ++k) {
              e.eps[k] = normal(rng);
              e.z[k] = e.mu[k] + sigma[k] * e.eps[k];
            }
          SoftmaxTerm term;
          if (cfg.sampler == TrainSampler::full) {
            term = full_softmax_term(e.z, positives, res.params.item_embeddings);
          } else {
            const auto t0 = std::chrono::steady_clock::now();
            const SamplerContext ctx = proposal->prepare(e.z);
            const auto samples = sample_batch(ctx, cfg.sample_count, rng);
            std::vector<double> pos_lq(positives.size());
            for (std::size_t n = 0; n < positives.size(); ++n)
              pos_lq[n] = ctx.log_prob(positives[n]);
            rec.sample_time_ms += detail::elapsed_ms(t0);
            term = sampled_softmax_term(e.z, positives, pos_lq, samples,
                                        res.params.item_embeddings);
          }
          user_loss += inv_s * term.loss;
          add_item_grads(term, e.z, inv_s * inv_batch, grads.item_embeddings);
          for (std::size_t k = 0; k < d; ++k) {
            dmu[k] += inv_s * term.dz[k];
            dlv[k] += inv_s * term.dz[k] * e.eps[k] * 0.5 * sigma[k];
          }
        }
        user_loss += cfg.beta * kl_gaussian(e.mu, e.logvar);
        const auto [kmu, klv] = kl_gaussian_grad(e.mu, e.logvar);
        for (std::size_t k = 0; k < d; ++k) {
          dmu[k] = inv_batch * (dmu[k] + cfg.beta * kmu[k]);
          dlv[k] = inv_batch * (dlv[k] + cfg.beta * klv[k]);
        }
        accumulate_encoder_grad(e, dmu, dlv, grads);
        epoch_loss += user_loss;
        ++seen;
      }
      opt.step(res.params, grads);
    }
    rec.loss = seen > 0 ? epoch_loss / static_cast<double>(seen) : 0.0;
    rec.train_time_ms = detail::elapsed_ms(epoch_start);
    if (!std::isfinite(rec.loss) || !res.params.all_finite_values())
      throw Error("training diverged at epoch " + std::to_string(epoch) +
                  " (loss = " + std::to_string(rec.loss) + ")");
    if (cfg.eval_every != 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs))
      rec.eval = evaluate(res.params, ds, cfg.eval_k);
    if (on_epoch) on_epoch(rec);
    res.trace.push_back(rec);
  }
  res.final_eval = evaluate(res.params, ds, cfg.eval_k);
  return res;
}

}  // namespace midx
