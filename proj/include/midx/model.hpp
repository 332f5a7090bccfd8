#pragma once

#include <cmath>
#include <fstream>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "midx/common.hpp"
#include "midx/io.hpp"
#include "midx/sampler.hpp"

namespace midx {

// Linear-encoder VAE parameters. Encoder weight matrices are stored M x D so
// that a sparse binary history selects rows.
struct ModelParams {
  Matrix item_embeddings;  // M x D, decoder logits z . q_i
  Matrix enc_mu_w;         // M x D
  std::vector<double> enc_mu_b;
  Matrix enc_logvar_w;     // M x D
  std::vector<double> enc_logvar_b;

  std::size_t num_items() const noexcept { return item_embeddings.rows(); }
  std::size_t dim() const noexcept { return item_embeddings.cols(); }

  static ModelParams zeros(std::size_t num_items, std::size_t dim) {
    ModelParams p;
    p.item_embeddings = Matrix(num_items, dim);
    p.enc_mu_w = Matrix(num_items, dim);
    p.enc_mu_b.assign(dim, 0.0);
    p.enc_logvar_w = Matrix(num_items, dim);
    p.enc_logvar_b.assign(dim, 0.0);
    return p;
  }

  static ModelParams random(std::size_t num_items, std::size_t dim, Rng& rng,
                            double init_std = 0.1) {
    ModelParams p = zeros(num_items, dim);
    std::normal_distribution<double> normal(0.0, init_std);
    for (double& v : p.item_embeddings.data()) v = normal(rng);
    for (double& v : p.enc_mu_w.data()) v = normal(rng);
    for (double& v : p.enc_logvar_w.data()) v = normal(rng);
    return p;
  }

  // Visits every parameter block as a flat span, in a fixed order.
  template <class F>
  void for_each_block(F&& f) {
    f(std::span<double>(item_embeddings.data()));
    f(std::span<double>(enc_mu_w.data()));
    f(std::span<double>(enc_mu_b));
    f(std::span<double>(enc_logvar_w.data()));
    f(std::span<double>(enc_logvar_b));
  }

  bool all_finite_values() const {
    return all_finite(item_embeddings.data()) && all_finite(enc_mu_w.data()) &&
           all_finite(enc_mu_b) && all_finite(enc_logvar_w.data()) && all_finite(enc_logvar_b);
  }

  bool operator==(const ModelParams&) const = default;
};

struct Encoding {
  std::vector<double> mu;
  std::vector<double> logvar;
  std::vector<double> z;
  std::vector<double> eps;
  std::vector<ItemId> kept;  // history items that survived input dropout
  double input_scale = 1.0;
};

namespace detail {

inline Encoding encode_kept(std::vector<ItemId> kept, double scale, const ModelParams& p) {
  const std::size_t d = p.dim();
  Encoding e;
  e.mu = p.enc_mu_b;
  e.logvar = p.enc_logvar_b;
  for (ItemId i : kept) {
    const auto wm = p.enc_mu_w.row(i);
    const auto wl = p.enc_logvar_w.row(i);
    for (std::size_t k = 0; k < d; ++k) {
      e.mu[k] += scale * wm[k];
      e.logvar[k] += scale * wl[k];
    }
  }
  e.kept = std::move(kept);
  e.input_scale = scale;
  return e;
}

}  // namespace detail

/// Training-path encoder: inverted dropout on the binary history, then
/// z = mu + exp(logvar / 2) * eps with eps ~ N(0, I).
inline Encoding encode(std::span<const ItemId> history, const ModelParams& params, Rng& rng,
                       double dropout_prob) {
  if (!(dropout_prob >= 0.0 && dropout_prob < 1.0))
    throw Error("dropout probability must be in [0, 1)");
  std::vector<ItemId> kept;
  kept.reserve(history.size());
  if (dropout_prob > 0.0) {
    std::bernoulli_distribution drop(dropout_prob);
    for (ItemId i : history)
      if (!drop(rng)) kept.push_back(i);
  } else {
    kept.assign(history.begin(), history.end());
  }
  Encoding e = detail::encode_kept(std::move(kept), 1.0 / (1.0 - dropout_prob), params);
  std::normal_distribution<double> normal(0.0, 1.0);
  e.eps.resize(params.dim());
  e.z.resize(params.dim());
  for (std::size_t k = 0; k < e.z.size(); ++k) {
    e.eps[k] = normal(rng);
    e.z[k] = e.mu[k] + std::exp(0.5 * e.logvar[k]) * e.eps[k];
  }
  return e;
}

/// Evaluation path: no dropout, z = mu.
inline Encoding encode_mean(std::span<const ItemId> history, const ModelParams& params) {
  Encoding e = detail::encode_kept({history.begin(), history.end()}, 1.0, params);
  e.z = e.mu;
  e.eps.assign(params.dim(), 0.0);
  return e;
}

/// Adds the encoder-weight gradients implied by dL/dmu and dL/dlogvar.
inline void accumulate_encoder_grad(const Encoding& e, std::span<const double> dmu,
                                    std::span<const double> dlogvar, ModelParams& grad) {
  const std::size_t d = dmu.size();
  for (ItemId i : e.kept) {
    auto gm = grad.enc_mu_w.row(i);
    auto gl = grad.enc_logvar_w.row(i);
    for (std::size_t k = 0; k < d; ++k) {
      gm[k] += e.input_scale * dmu[k];
      gl[k] += e.input_scale * dlogvar[k];
    }
  }
  for (std::size_t k = 0; k < d; ++k) {
    grad.enc_mu_b[k] += dmu[k];
    grad.enc_logvar_b[k] += dlogvar[k];
  }
}

/// KL(N(mu, diag exp(logvar)) || N(0, I)).
inline double kl_gaussian(std::span<const double> mu, std::span<const double> logvar) {
  double s = 0.0;
  for (std::size_t k = 0; k < mu.size(); ++k)
    s += logvar[k] - mu[k] * mu[k] - std::exp(logvar[k]) + 1.0;
  return -0.5 * s;
}

/// Gradient of kl_gaussian: (mu, (exp(logvar) - 1) / 2).
inline std::pair<std::vector<double>, std::vector<double>> kl_gaussian_grad(
    std::span<const double> mu, std::span<const double> logvar) {
  std::vector<double> dmu(mu.begin(), mu.end()), dlv(logvar.size());
  for (std::size_t k = 0; k < dlv.size(); ++k) dlv[k] = 0.5 * (std::exp(logvar[k]) - 1.0);
  return {std::move(dmu), std::move(dlv)};
}

// Loss and gradient of a softmax reconstruction term. The gradient with
// respect to item embedding q_j is coeff_j * z, so item gradients are
// reported as (item, coeff) pairs; an item may appear more than once.
struct SoftmaxTerm {
  double loss = 0.0;
  std::vector<double> dz;
  std::vector<std::pair<ItemId, double>> item_coeffs;
};

inline void add_item_grads(const SoftmaxTerm& t, std::span<const double> z, double weight,
                           Matrix& d_items) {
  for (const auto& [item, coeff] : t.item_coeffs) {
    auto g = d_items.row(item);
    for (std::size_t k = 0; k < z.size(); ++k) g[k] += weight * coeff * z[k];
  }
}

/// Negative sampled-softmax log-likelihood summed over `positives`. For
/// positive i the candidate set is {i} + samples, each logit corrected by
/// -log Q. `positive_log_q[n]` is log Q of positives[n] under the same
/// proposal the samples came from.
inline SoftmaxTerm sampled_softmax_term(std::span<const double> z,
                                        std::span<const ItemId> positives,
                                        std::span<const double> positive_log_q,
                                        std::span<const Sample> samples,
                                        const Matrix& item_embeddings) {
  if (positive_log_q.size() != positives.size())
    throw Error("sampled_softmax_term: one log Q per positive required");
  if (samples.empty()) throw Error("sampled_softmax_term: empty sample set");
  for (double lq : positive_log_q)
    if (!std::isfinite(lq)) throw Error("sampled_softmax_term: non-finite log Q for a positive");
  for (const auto& s : samples)
    if (!std::isfinite(s.log_q)) throw Error("sampled_softmax_term: non-finite log Q for a sample");

  const std::size_t d = z.size(), t = samples.size();
  SoftmaxTerm out;
  out.dz.assign(d, 0.0);
  std::vector<double> sample_logit(t);
  for (std::size_t j = 0; j < t; ++j)
    sample_logit[j] = dot(z, item_embeddings.row(samples[j].item)) - samples[j].log_q;
  const double sample_lse = logsumexp(sample_logit);

  // Per-sample coefficients accumulate across positives, then are emitted once.
  std::vector<double> sample_coeff(t, 0.0);
  for (std::size_t n = 0; n < positives.size(); ++n) {
    const ItemId i = positives[n];
    const double pos_logit = dot(z, item_embeddings.row(i)) - positive_log_q[n];
    const double hi = std::max(pos_logit, sample_lse);
    const double lse = hi + std::log(std::exp(pos_logit - hi) + std::exp(sample_lse - hi));
    out.loss += lse - pos_logit;
    const double p_pos = std::exp(pos_logit - lse);
    out.item_coeffs.emplace_back(i, p_pos - 1.0);
    for (std::size_t j = 0; j < t; ++j) sample_coeff[j] += std::exp(sample_logit[j] - lse);
  }
  for (std::size_t j = 0; j < t; ++j) out.item_coeffs.emplace_back(samples[j].item, sample_coeff[j]);
  for (const auto& [item, coeff] : out.item_coeffs) {
    const auto q = item_embeddings.row(item);
    for (std::size_t k = 0; k < d; ++k) out.dz[k] += coeff * q[k];
  }
  return out;
}

/// Exact multinomial negative log-likelihood over all items.
inline SoftmaxTerm full_softmax_term(std::span<const double> z, std::span<const ItemId> positives,
                                     const Matrix& item_embeddings) {
  const std::size_t m = item_embeddings.rows(), d = z.size();
  std::vector<double> logits(m);
  for (std::size_t j = 0; j < m; ++j) logits[j] = dot(z, item_embeddings.row(j));
  const double lse = logsumexp(logits);
  SoftmaxTerm out;
  out.dz.assign(d, 0.0);
  const double np = static_cast<double>(positives.size());
  std::vector<double> coeff(m);
  for (std::size_t j = 0; j < m; ++j) coeff[j] = np * std::exp(logits[j] - lse);
  for (ItemId i : positives) {
    out.loss += lse - logits[i];
    coeff[i] -= 1.0;
  }
  out.item_coeffs.reserve(m);
  for (std::size_t j = 0; j < m; ++j) {
    out.item_coeffs.emplace_back(static_cast<ItemId>(j), coeff[j]);
    const auto q = item_embeddings.row(j);
    for (std::size_t k = 0; k < d; ++k) out.dz[k] += coeff[j] * q[k];
  }
  return out;
}

inline constexpr std::uint32_t kModelVersion = 1;

inline void save_model(std::ostream& out, const ModelParams& p) {
  io::write_magic(out, "MIDXMD");
  io::write_pod<std::uint32_t>(out, kModelVersion);
  io::write_matrix(out, p.item_embeddings);
  io::write_matrix(out, p.enc_mu_w);
  io::write_vector(out, p.enc_mu_b);
  io::write_matrix(out, p.enc_logvar_w);
  io::write_vector(out, p.enc_logvar_b);
}

inline ModelParams load_model(std::istream& in) {
  io::expect_magic(in, "MIDXMD");
  if (io::read_pod<std::uint32_t>(in) != kModelVersion) throw Error("unsupported model version");
  ModelParams p;
  p.item_embeddings = io::read_matrix(in);
  p.enc_mu_w = io::read_matrix(in);
  p.enc_mu_b = io::read_vector<double>(in);
  p.enc_logvar_w = io::read_matrix(in);
  p.enc_logvar_b = io::read_vector<double>(in);
  return p;
}

inline void save_model(const std::string& path, const ModelParams& p) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write '" + path + "'");
  save_model(f, p);
}

inline ModelParams load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "'");
  return load_model(f);
}

}  // namespace midx
