#pragma once

#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <string>
#include <string_view>

#include "midx/common.hpp"
#include "midx/dataset.hpp"
#include "midx/trainer.hpp"

namespace midx {

/// Flat `key = value` text with `#` comments. Later keys override earlier
/// ones; a line without '=' is a usage error.
inline std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return std::string_view{};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s(line);
    if (const auto h = s.find('#'); h != std::string_view::npos) s = s.substr(0, h);
    s = trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos)
      throw UsageError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const auto key = trim(s.substr(0, eq));
    if (key.empty()) throw UsageError("config line " + std::to_string(lineno) + ": empty key");
    kv[std::string(key)] = std::string(trim(s.substr(eq + 1)));
  }
  return kv;
}

// Everything the `train` pipeline needs: data handling plus TrainConfig.
struct PipelineConfig {
  std::string dataset;  // interaction triples, or a dataset cache (.bin)
  std::size_t min_interactions = 10;
  double positive_threshold = kNegInf;
  double holdout_ratio = 0.8;
  std::uint64_t split_seed = 1;
  std::string output_model;
  std::string output_trace;
  TrainConfig train;
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* b = v.data();
  const auto* e = v.data() + v.size();
  const auto r = std::from_chars(b, e, out);
  if (r.ec != std::errc{} || r.ptr != e)
    throw UsageError("config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

}  // namespace detail

inline PipelineConfig pipeline_config_from(const std::map<std::string, std::string>& kv) {
  PipelineConfig c;
  auto& t = c.train;
  for (const auto& [key, v] : kv) {
    using detail::parse_number;
    if (key == "dataset") c.dataset = v;
    else if (key == "min_interactions") c.min_interactions = parse_number<std::size_t>(key, v);
    else if (key == "positive_threshold") c.positive_threshold = parse_number<double>(key, v);
    else if (key == "holdout_ratio") c.holdout_ratio = parse_number<double>(key, v);
    else if (key == "split_seed") c.split_seed = parse_number<std::uint64_t>(key, v);
    else if (key == "output_model") c.output_model = v;
    else if (key == "output_trace") c.output_trace = v;
    else if (key == "latent_dim") t.latent_dim = parse_number<std::size_t>(key, v);
    else if (key == "codebook_size") t.codebook_size = parse_number<std::size_t>(key, v);
    else if (key == "sample_count") t.sample_count = parse_number<std::size_t>(key, v);
    else if (key == "sampler_kind") t.sampler = parse_train_sampler(v);
    else if (key == "mc_draws") t.mc_draws = parse_number<std::size_t>(key, v);
    else if (key == "learning_rate") t.learning_rate = parse_number<double>(key, v);
    else if (key == "weight_decay") t.weight_decay = parse_number<double>(key, v);
    else if (key == "batch_size") t.batch_size = parse_number<std::size_t>(key, v);
    else if (key == "epochs") t.epochs = parse_number<std::size_t>(key, v);
    else if (key == "index_rebuild_interval")
      t.index_rebuild_interval = parse_number<std::size_t>(key, v);
    else if (key == "kmeans_iters") t.kmeans_iters = parse_number<std::size_t>(key, v);
    else if (key == "input_dropout_prob") t.input_dropout_prob = parse_number<double>(key, v);
    else if (key == "beta") t.beta = parse_number<double>(key, v);
    else if (key == "init_std") t.init_std = parse_number<double>(key, v);
    else if (key == "seed") t.seed = parse_number<std::uint64_t>(key, v);
    else if (key == "pop_function") t.pop_function = parse_pop_function(v);
    else if (key == "eval_k") t.eval_k = parse_number<std::size_t>(key, v);
    else if (key == "eval_every") t.eval_every = parse_number<std::size_t>(key, v);
    else throw UsageError("unknown config key '" + key + "'");
  }
  if (c.dataset.empty()) throw UsageError("config is missing required key 'dataset'");
  t.validate();
  return c;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open config file '" + path + "'");
  return pipeline_config_from(parse_key_values(f));
}

}  // namespace midx
