#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "midx/common.hpp"
#include "midx/io.hpp"

namespace midx {

// Implicit-feedback interactions with an optional per-user train/holdout
// split. Item lists are sorted ascending; ids are dense.
struct InteractionDataset {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<std::vector<ItemId>> interactions;
  std::vector<std::vector<ItemId>> train;
  std::vector<std::vector<ItemId>> holdout;

  std::size_t num_interactions() const {
    std::size_t n = 0;
    for (const auto& u : interactions) n += u.size();
    return n;
  }
  bool is_split() const { return !train.empty(); }

  bool operator==(const InteractionDataset&) const = default;
};

struct LoadOptions {
  std::size_t min_interactions = 10;
  // Records whose value is below this threshold are dropped. Records
  // without a value column always count as positive.
  double positive_threshold = kNegInf;
};

namespace detail {

// Splits on whitespace, commas and the "::" separator used by MovieLens dumps.
inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  auto is_sep = [&](std::size_t k) {
    const char c = line[k];
    return c == ' ' || c == '\t' || c == ',' || c == '\r' || c == ':';
  };
  while (i < line.size()) {
    while (i < line.size() && is_sep(i)) ++i;
    const std::size_t start = i;
    while (i < line.size() && !is_sep(i)) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline double parse_double(std::string_view s, std::size_t line) {
  std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (end != tmp.c_str() + tmp.size() || !std::isfinite(v))
    throw ParseError(line, "bad numeric value '" + tmp + "'");
  return v;
}

}  // namespace detail

/// Drops users and items with fewer than `min_interactions` entries,
/// repeating until nothing changes, then re-densifies both id spaces.
inline InteractionDataset filter_min_interactions(const InteractionDataset& in,
                                                  std::size_t min_interactions) {
  std::vector<std::vector<ItemId>> rows = in.interactions;
  std::vector<bool> user_alive(in.num_users, true), item_alive(in.num_items, true);
  for (bool changed = true; changed;) {
    changed = false;
    std::vector<std::size_t> item_count(in.num_items, 0);
    for (std::size_t u = 0; u < rows.size(); ++u)
      if (user_alive[u])
        for (ItemId i : rows[u]) ++item_count[i];
    for (std::size_t i = 0; i < in.num_items; ++i) {
      if (item_alive[i] && item_count[i] < min_interactions) {
        item_alive[i] = false;
        changed = true;
      }
    }
    for (std::size_t u = 0; u < rows.size(); ++u) {
      if (!user_alive[u]) continue;
      std::erase_if(rows[u], [&](ItemId i) { return !item_alive[i]; });
      if (rows[u].size() < min_interactions) {
        user_alive[u] = false;
        changed = true;
      }
    }
  }

  std::vector<ItemId> item_map(in.num_items, 0);
  std::size_t items = 0;
  for (std::size_t i = 0; i < in.num_items; ++i)
    if (item_alive[i]) item_map[i] = static_cast<ItemId>(items++);

  InteractionDataset out;
  out.num_items = items;
  for (std::size_t u = 0; u < rows.size(); ++u) {
    if (!user_alive[u]) continue;
    std::vector<ItemId> r;
    r.reserve(rows[u].size());
    for (ItemId i : rows[u]) r.push_back(item_map[i]);
    std::sort(r.begin(), r.end());
    out.interactions.push_back(std::move(r));
  }
  out.num_users = out.interactions.size();
  if (out.num_users == 0 || out.num_items == 0)
    throw Error("dataset is empty after filtering (min_interactions = " +
                std::to_string(min_interactions) + ")");
  return out;
}

/// Reads `user item [value [timestamp]]` records. Raw ids are arbitrary
/// tokens, densified in first-appearance order; duplicates collapse.
inline InteractionDataset load_interactions(std::istream& in,
                                            const LoadOptions& opts = {}) {
  std::unordered_map<std::string, ItemId> users, items;
  std::vector<std::vector<ItemId>> rows;
  std::string line;
  std::size_t lineno = 0;
  auto intern = [](std::unordered_map<std::string, ItemId>& map, std::string_view tok) {
    auto [it, inserted] =
        map.try_emplace(std::string(tok), static_cast<ItemId>(map.size()));
    return it->second;
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const auto fields = detail::split_fields(
        std::string_view(line).substr(0, hash == std::string::npos ? line.size() : hash));
    if (fields.empty()) continue;
    if (fields.size() < 2 || fields.size() > 4)
      throw ParseError(lineno, "expected 'user item [value [timestamp]]', got " +
                                   std::to_string(fields.size()) + " fields");
    if (fields.size() >= 3) {
      const double value = detail::parse_double(fields[2], lineno);
      if (value < opts.positive_threshold) continue;
    }
    const ItemId u = intern(users, fields[0]);
    const ItemId i = intern(items, fields[1]);
    if (u >= rows.size()) rows.resize(u + 1);
    rows[u].push_back(i);
  }
  rows.resize(users.size());
  for (auto& r : rows) {
    std::sort(r.begin(), r.end());
    r.erase(std::unique(r.begin(), r.end()), r.end());
  }

  InteractionDataset raw;
  raw.num_users = users.size();
  raw.num_items = items.size();
  raw.interactions = std::move(rows);
  if (raw.num_users == 0) throw Error("dataset is empty: no interaction records");
  return filter_min_interactions(raw, opts.min_interactions);
}

inline InteractionDataset load_interactions(const std::string& path,
                                            const LoadOptions& opts = {}) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open interaction file '" + path + "'");
  return load_interactions(f, opts);
}

/// Per user, ceil(ratio * n) items go to train (capped at n - 1 so the
/// holdout is never empty) and the rest to holdout.
inline InteractionDataset split_holdout(const InteractionDataset& ds, double ratio,
                                        std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error("split ratio must be in (0, 1)");
  InteractionDataset out = ds;
  out.train.assign(ds.num_users, {});
  out.holdout.assign(ds.num_users, {});
  Rng rng(seed);
  for (std::size_t u = 0; u < ds.num_users; ++u) {
    const auto& all = ds.interactions[u];
    const std::size_t n = all.size();
    if (n < 2)
      throw Error("user " + std::to_string(u) + " has " + std::to_string(n) +
                  " interaction(s); cannot split");
    std::vector<ItemId> perm = all;
    std::shuffle(perm.begin(), perm.end(), rng);
    // The epsilon keeps exact products such as 0.8 * 10 from rounding up.
    auto n_train = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    out.train[u].assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.holdout[u].assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
    std::sort(out.train[u].begin(), out.train[u].end());
    std::sort(out.holdout[u].begin(), out.holdout[u].end());
  }
  return out;
}

enum class PopFunction { raw, log1p, pow075 };

inline std::string to_string(PopFunction f) {
  switch (f) {
    case PopFunction::raw: return "raw";
    case PopFunction::log1p: return "log1p";
    case PopFunction::pow075: return "pow075";
  }
  return "?";
}

inline PopFunction parse_pop_function(std::string_view s) {
  if (s == "raw") return PopFunction::raw;
  if (s == "log1p") return PopFunction::log1p;
  if (s == "pow075") return PopFunction::pow075;
  throw UsageError("unknown popularity function '" + std::string(s) +
                   "' (expected raw, log1p or pow075)");
}

inline double apply_pop_function(PopFunction f, std::uint64_t count) {
  const double c = static_cast<double>(count);
  switch (f) {
    case PopFunction::raw: return c;
    case PopFunction::log1p: return std::log1p(c);
    case PopFunction::pow075: return std::pow(c, 0.75);
  }
  return c;
}

struct PopularityVector {
  PopFunction func = PopFunction::raw;
  std::vector<std::uint64_t> counts;
  std::vector<double> weights;

  static PopularityVector from_counts(std::vector<std::uint64_t> counts, PopFunction f) {
    PopularityVector p;
    p.func = f;
    p.counts = std::move(counts);
    p.weights.reserve(p.counts.size());
    for (auto c : p.counts) p.weights.push_back(apply_pop_function(f, c));
    return p;
  }
};

/// Counts come from the train split when one exists.
inline PopularityVector popularity_vector(const InteractionDataset& ds, PopFunction f) {
  if (ds.num_items == 0) throw Error("popularity of an empty dataset");
  std::vector<std::uint64_t> counts(ds.num_items, 0);
  const auto& rows = ds.is_split() ? ds.train : ds.interactions;
  for (const auto& r : rows)
    for (ItemId i : r) ++counts[i];
  return PopularityVector::from_counts(std::move(counts), f);
}

// Binary cache: "MIDXDS" magic, u32 version, then little-endian u64/u32 arrays.
inline constexpr std::uint32_t kDatasetCacheVersion = 1;

inline void save_dataset(std::ostream& out, const InteractionDataset& ds) {
  io::write_magic(out, "MIDXDS");
  io::write_pod<std::uint32_t>(out, kDatasetCacheVersion);
  io::write_pod<std::uint64_t>(out, ds.num_users);
  io::write_pod<std::uint64_t>(out, ds.num_items);
  io::write_pod<std::uint8_t>(out, ds.is_split() ? 1 : 0);
  auto write_rows = [&](const std::vector<std::vector<ItemId>>& rows) {
    for (const auto& r : rows) io::write_vector(out, r);
  };
  write_rows(ds.interactions);
  if (ds.is_split()) {
    write_rows(ds.train);
    write_rows(ds.holdout);
  }
}

inline InteractionDataset load_dataset(std::istream& in) {
  io::expect_magic(in, "MIDXDS");
  const auto version = io::read_pod<std::uint32_t>(in);
  if (version != kDatasetCacheVersion)
    throw Error("unsupported dataset cache version " + std::to_string(version));
  InteractionDataset ds;
  ds.num_users = io::read_pod<std::uint64_t>(in);
  ds.num_items = io::read_pod<std::uint64_t>(in);
  const bool split = io::read_pod<std::uint8_t>(in) != 0;
  auto read_rows = [&](std::vector<std::vector<ItemId>>& rows) {
    rows.resize(ds.num_users);
    for (auto& r : rows) {
      r = io::read_vector<ItemId>(in);
      for (ItemId i : r)
        if (i >= ds.num_items) throw Error("dataset cache: item id out of range");
    }
  };
  read_rows(ds.interactions);
  if (split) {
    read_rows(ds.train);
    read_rows(ds.holdout);
  }
  return ds;
}

inline void save_dataset(const std::string& path, const InteractionDataset& ds) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write '" + path + "'");
  save_dataset(f, ds);
}

inline InteractionDataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "'");
  return load_dataset(f);
}

}  // namespace midx
