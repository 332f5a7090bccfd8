#pragma once

#include <random>
#include <sstream>

#include "midx/dataset.hpp"

namespace midx::testing {

// 200 users x 100 items in 4 blocks of 25. User u lives in block u % 4 and
// picks `per_user` distinct items of that block with Zipf-like preference,
// so the block is easy to recover and in-block order follows popularity.
inline InteractionDataset planted_blocks(std::uint64_t seed, std::size_t users = 200,
                                         std::size_t items = 100, std::size_t blocks = 4,
                                         std::size_t per_user = 16) {
  const std::size_t block_size = items / blocks;
  Rng rng(seed);
  std::vector<double> w(block_size);
  for (std::size_t r = 0; r < block_size; ++r) w[r] = 1.0 / std::pow(double(r + 1), 0.8);
  std::ostringstream os;
  for (std::size_t u = 0; u < users; ++u) {
    const std::size_t b = u % blocks;
    // Weighted sampling without replacement via exponential keys.
    std::vector<std::pair<double, std::size_t>> keys(block_size);
    std::exponential_distribution<double> e(1.0);
    for (std::size_t r = 0; r < block_size; ++r) keys[r] = {e(rng) / w[r], r};
    std::ranges::sort(keys);
    for (std::size_t n = 0; n < per_user; ++n)
      os << u << ' ' << b * block_size + keys[n].second << '\n';
  }
  std::istringstream in(os.str());
  return load_interactions(in, LoadOptions{1, kNegInf});
}

}  // namespace midx::testing
