#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "midx/common.hpp"
#include "midx/io.hpp"
#include "midx/kmeans.hpp"

namespace midx {

/// Inverted multi-index over item embeddings with two product-quantization
/// codebooks. Every item i satisfies
///
///   q_i = (c1[k1(i)] ++ c2[k2(i)]) + residual_i
///
/// and sits in exactly one bucket (k1, k2). Buckets are stored CSR-style:
/// items of cell c = k1 * K + k2 are bucket_items[bucket_offsets[c] ..
/// bucket_offsets[c + 1]). Cells may be empty.
struct MultiIndex {
  std::size_t dim = 0;            // D, even
  std::size_t codebook_size = 0;  // K
  Matrix codebook1;               // K x D/2
  Matrix codebook2;               // K x D/2
  std::vector<std::uint32_t> code1;  // per item
  std::vector<std::uint32_t> code2;  // per item
  Matrix residuals;               // M x D
  std::vector<std::uint64_t> bucket_offsets;  // K*K + 1
  std::vector<ItemId> bucket_items;           // M, grouped by cell
  double max_residual_norm = 0.0;
  std::size_t kmeans_iters = 20;
  std::uint64_t seed = 0;

  std::size_t num_items() const noexcept { return code1.size(); }
  std::size_t half_dim() const noexcept { return dim / 2; }
  std::size_t num_cells() const noexcept { return codebook_size * codebook_size; }
  std::size_t cell_of(ItemId i) const noexcept {
    return static_cast<std::size_t>(code1[i]) * codebook_size + code2[i];
  }
  std::span<const ItemId> bucket(std::size_t k1, std::size_t k2) const noexcept {
    const std::size_t c = k1 * codebook_size + k2;
    return {bucket_items.data() + bucket_offsets[c],
            static_cast<std::size_t>(bucket_offsets[c + 1] - bucket_offsets[c])};
  }
  std::size_t bucket_size(std::size_t cell) const noexcept {
    return static_cast<std::size_t>(bucket_offsets[cell + 1] - bucket_offsets[cell]);
  }

  /// Codeword concatenation c1[k1(i)] ++ c2[k2(i)], i.e. q_i - residual_i.
  std::vector<double> reconstruction(ItemId i) const {
    std::vector<double> out(dim);
    const auto a = codebook1.row(code1[i]);
    const auto b = codebook2.row(code2[i]);
    std::ranges::copy(a, out.begin());
    std::ranges::copy(b, out.begin() + static_cast<std::ptrdiff_t>(half_dim()));
    return out;
  }

  bool operator==(const MultiIndex&) const = default;
};

namespace detail {

inline Matrix half_columns(const Matrix& m, std::size_t offset, std::size_t width) {
  Matrix out(m.rows(), width);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto src = m.row(i).subspan(offset, width);
    std::ranges::copy(src, out.row(i).begin());
  }
  return out;
}

inline void finish_index(MultiIndex& idx, const Matrix& embeddings, KMeansResult first,
                         KMeansResult second) {
  const std::size_t m = embeddings.rows(), half = idx.half_dim(), k = idx.codebook_size;
  idx.codebook1 = std::move(first.centroids);
  idx.codebook2 = std::move(second.centroids);
  idx.code1 = std::move(first.assignments);
  idx.code2 = std::move(second.assignments);

  idx.residuals = Matrix(m, idx.dim);
  idx.max_residual_norm = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto q = embeddings.row(i);
    auto r = idx.residuals.row(i);
    const auto c1 = idx.codebook1.row(idx.code1[i]);
    const auto c2 = idx.codebook2.row(idx.code2[i]);
    for (std::size_t d = 0; d < half; ++d) {
      r[d] = q[d] - c1[d];
      r[half + d] = q[half + d] - c2[d];
    }
    idx.max_residual_norm = std::max(idx.max_residual_norm, norm(r));
  }

  idx.bucket_offsets.assign(k * k + 1, 0);
  for (std::size_t i = 0; i < m; ++i) ++idx.bucket_offsets[idx.cell_of(static_cast<ItemId>(i)) + 1];
  for (std::size_t c = 0; c < k * k; ++c) idx.bucket_offsets[c + 1] += idx.bucket_offsets[c];
  idx.bucket_items.assign(m, 0);
  std::vector<std::uint64_t> cursor(idx.bucket_offsets.begin(), idx.bucket_offsets.end() - 1);
  for (std::size_t i = 0; i < m; ++i)
    idx.bucket_items[cursor[idx.cell_of(static_cast<ItemId>(i))]++] = static_cast<ItemId>(i);
}

}  // namespace detail

/// Product-quantizes `item_embeddings` (M x D, D even) into two K-word
/// codebooks, one per half of the vector.
inline MultiIndex build_index(const Matrix& item_embeddings, std::size_t codebook_size,
                              std::uint64_t seed, std::size_t kmeans_iters = 20) {
  if (item_embeddings.rows() == 0) throw Error("build_index: no items");
  if (item_embeddings.cols() == 0 || item_embeddings.cols() % 2 != 0)
    throw Error("build_index: embedding dimension must be even and positive, got " +
                std::to_string(item_embeddings.cols()));
  if (codebook_size == 0) throw Error("build_index: K must be at least 1");
  if (!all_finite(item_embeddings.data())) throw Error("build_index: non-finite embedding");

  MultiIndex idx;
  idx.dim = item_embeddings.cols();
  idx.codebook_size = codebook_size;
  idx.kmeans_iters = kmeans_iters;
  idx.seed = seed;
  const std::size_t half = idx.half_dim();
  auto first = kmeans(detail::half_columns(item_embeddings, 0, half), codebook_size,
                      kmeans_iters, seed);
  auto second = kmeans(detail::half_columns(item_embeddings, half, half), codebook_size,
                       kmeans_iters, seed ^ 0x9e3779b97f4a7c15ULL);
  detail::finish_index(idx, item_embeddings, std::move(first), std::move(second));
  return idx;
}

/// Re-quantizes updated embeddings, warm-starting each k-means from the
/// previous partition. Returns a new index; `previous` is untouched.
inline MultiIndex rebuild(const MultiIndex& previous, const Matrix& item_embeddings) {
  if (item_embeddings.rows() != previous.num_items() || item_embeddings.cols() != previous.dim)
    throw Error("rebuild: embedding shape " + std::to_string(item_embeddings.rows()) + "x" +
                std::to_string(item_embeddings.cols()) + " does not match index " +
                std::to_string(previous.num_items()) + "x" + std::to_string(previous.dim));
  if (!all_finite(item_embeddings.data())) throw Error("rebuild: non-finite embedding");
  MultiIndex idx;
  idx.dim = previous.dim;
  idx.codebook_size = previous.codebook_size;
  idx.kmeans_iters = previous.kmeans_iters;
  idx.seed = previous.seed;
  const std::size_t half = idx.half_dim();
  auto first = kmeans(detail::half_columns(item_embeddings, 0, half), idx.codebook_size,
                      idx.kmeans_iters, idx.seed, &previous.code1, &previous.codebook1);
  auto second = kmeans(detail::half_columns(item_embeddings, half, half), idx.codebook_size,
                       idx.kmeans_iters, idx.seed, &previous.code2, &previous.codebook2);
  detail::finish_index(idx, item_embeddings, std::move(first), std::move(second));
  return idx;
}

inline constexpr std::uint32_t kIndexVersion = 1;

inline void save_index(std::ostream& out, const MultiIndex& idx) {
  io::write_magic(out, "MIDXIX");
  io::write_pod<std::uint32_t>(out, kIndexVersion);
  io::write_pod<std::uint64_t>(out, idx.dim);
  io::write_pod<std::uint64_t>(out, idx.codebook_size);
  io::write_pod<std::uint64_t>(out, idx.kmeans_iters);
  io::write_pod<std::uint64_t>(out, idx.seed);
  io::write_pod<double>(out, idx.max_residual_norm);
  io::write_matrix(out, idx.codebook1);
  io::write_matrix(out, idx.codebook2);
  io::write_vector(out, idx.code1);
  io::write_vector(out, idx.code2);
  io::write_matrix(out, idx.residuals);
  io::write_vector(out, idx.bucket_offsets);
  io::write_vector(out, idx.bucket_items);
}

inline MultiIndex load_index(std::istream& in) {
  io::expect_magic(in, "MIDXIX");
  const auto version = io::read_pod<std::uint32_t>(in);
  if (version != kIndexVersion) throw Error("unsupported index version " + std::to_string(version));
  MultiIndex idx;
  idx.dim = io::read_pod<std::uint64_t>(in);
  idx.codebook_size = io::read_pod<std::uint64_t>(in);
  idx.kmeans_iters = io::read_pod<std::uint64_t>(in);
  idx.seed = io::read_pod<std::uint64_t>(in);
  idx.max_residual_norm = io::read_pod<double>(in);
  idx.codebook1 = io::read_matrix(in);
  idx.codebook2 = io::read_matrix(in);
  idx.code1 = io::read_vector<std::uint32_t>(in);
  idx.code2 = io::read_vector<std::uint32_t>(in);
  idx.residuals = io::read_matrix(in);
  idx.bucket_offsets = io::read_vector<std::uint64_t>(in);
  idx.bucket_items = io::read_vector<ItemId>(in);
  const std::size_t m = idx.code1.size(), k = idx.codebook_size;
  if (idx.dim % 2 != 0 || idx.code2.size() != m || idx.residuals.rows() != m ||
      idx.residuals.cols() != idx.dim || idx.bucket_items.size() != m ||
      idx.bucket_offsets.size() != k * k + 1 || idx.codebook1.rows() != k ||
      idx.codebook2.rows() != k || idx.codebook1.cols() != idx.dim / 2)
    throw Error("index file is inconsistent");
  return idx;
}

inline void save_index(const std::string& path, const MultiIndex& idx) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write '" + path + "'");
  save_index(f, idx);
}

inline MultiIndex load_index(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "'");
  return load_index(f);
}

}  // namespace midx
