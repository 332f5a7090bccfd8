// midx: command-line front end for the multi-index sampler library.
//
// Exit codes: 0 success, 1 internal error, 2 usage or configuration error.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "midx/midx.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace midx;

namespace {

// Rows of whitespace- or comma-separated numbers, one vector per line.
Matrix read_vectors_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open '" + path + "'");
  std::vector<double> values;
  std::size_t rows = 0, cols = 0, lineno = 0;
  std::string line;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto fields = detail::split_fields(line);
    if (fields.empty()) continue;
    if (cols == 0) cols = fields.size();
    if (fields.size() != cols)
      throw ParseError(lineno, "expected " + std::to_string(cols) + " columns in '" + path + "'");
    for (auto fld : fields) values.push_back(detail::parse_double(fld, lineno));
    ++rows;
  }
  if (rows == 0) throw UsageError("'" + path + "' holds no vectors");
  Matrix m(rows, cols);
  std::copy(values.begin(), values.end(), m.data().begin());
  return m;
}

// Item embeddings from a model file, or from a CSV of vectors.
Matrix load_embeddings(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  char head[6] = {};
  probe.read(head, 6);
  if (probe && std::string(head, 6) == "MIDXMD") return load_model(path).item_embeddings;
  return read_vectors_csv(path);
}

InteractionDataset load_any_dataset(const std::string& path, const LoadOptions& opts) {
  std::ifstream probe(path, std::ios::binary);
  char head[6] = {};
  probe.read(head, 6);
  if (probe && std::string(head, 6) == "MIDXDS") return load_dataset(path);
  return load_interactions(path, opts);
}

std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(static_cast<std::size_t>(std::stod(item)));
    } catch (const std::exception&) {
      throw UsageError("cannot parse list entry '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("empty list");
  return out;
}

class OutputFile {
 public:
  explicit OutputFile(const std::string& path) {
    if (!path.empty() && path != "-") {
      file_.open(path);
      if (!file_) throw Error("cannot write '" + path + "'");
    }
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

// ---------------------------------------------------------------- ingest

struct IngestArgs {
  std::string input, output;
  std::size_t min_interactions = 10;
  double threshold = kNegInf;
  double holdout_ratio = 0.8;
  std::uint64_t split_seed = 1;
  bool no_split = false;
};

void run_ingest(const IngestArgs& a) {
  auto ds = load_interactions(a.input, LoadOptions{a.min_interactions, a.threshold});
  if (!a.no_split) ds = split_holdout(ds, a.holdout_ratio, a.split_seed);
  if (!a.output.empty()) save_dataset(a.output, ds);
  json j{{"users", ds.num_users},
         {"items", ds.num_items},
         {"interactions", ds.num_interactions()},
         {"split", ds.is_split()}};
  std::cout << j.dump() << '\n';
}

// ----------------------------------------------------------- build-index

struct IndexArgs {
  std::string embeddings, output;
  std::size_t codebook_size = 16, kmeans_iters = 20;
  std::uint64_t seed = 42;
};

void run_build_index(const IndexArgs& a) {
  const Matrix emb = load_embeddings(a.embeddings);
  const auto idx = build_index(emb, a.codebook_size, a.seed, a.kmeans_iters);
  save_index(a.output, idx);
  std::size_t empty = 0;
  for (std::size_t c = 0; c < idx.num_cells(); ++c) empty += idx.bucket_size(c) == 0;
  json j{{"items", idx.num_items()},       {"dim", idx.dim},
         {"codebook_size", idx.codebook_size}, {"empty_cells", empty},
         {"max_residual_norm", idx.max_residual_norm}};
  std::cout << j.dump() << '\n';
}

// ---------------------------------------------------------------- sample

struct SampleArgs {
  std::string index, queries, dataset, output, kind = "uni", pop_function = "log1p";
  std::size_t count = 200;
  std::uint64_t seed = 42;
};

void run_sample(const SampleArgs& a) {
  const SamplerKind kind = parse_sampler_kind(a.kind);
  const MultiIndex idx = load_index(a.index);
  const Matrix queries = read_vectors_csv(a.queries);
  if (queries.cols() != idx.dim)
    throw UsageError("query dimension " + std::to_string(queries.cols()) +
                     " does not match index dimension " + std::to_string(idx.dim));
  std::optional<PopularityVector> pop;
  if (kind == SamplerKind::pop || kind == SamplerKind::popularity) {
    if (a.dataset.empty()) throw UsageError("--dataset is required for popularity samplers");
    const auto ds = load_any_dataset(a.dataset, LoadOptions{});
    if (ds.num_items != idx.num_items())
      throw UsageError("dataset item count does not match the index");
    pop = popularity_vector(ds, parse_pop_function(a.pop_function));
  }
  const Proposal proposal(kind, &idx, pop ? &*pop : nullptr, idx.num_items());
  Rng rng(a.seed);
  OutputFile out(a.output);
  auto& os = out.stream();
  os << "query_id,item,log_q\n" << std::setprecision(17);
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    const auto ctx = proposal.prepare(queries.row(q));
    for (const auto& s : sample_batch(ctx, a.count, rng)) os << q << ',' << s.item << ',' << s.log_q << '\n';
  }
}

// ---------------------------------------------------------------- verify

struct VerifyArgs {
  std::string index, embeddings, report, curves;
  std::size_t trials = 100, items = 100, dim = 8, codebook_size = 16, clusters = 8;
  std::size_t curve_samples = 100'000;
  double query_scale = 1.0, spread = 0.4;
  std::uint64_t seed = 1;
};

PopularityVector synthetic_pop(std::size_t m, Rng& rng) {
  std::vector<std::uint64_t> counts(m);
  std::geometric_distribution<std::uint64_t> g(0.05);
  for (auto& c : counts) c = g(rng) + 1;
  return PopularityVector::from_counts(counts, PopFunction::log1p);
}

Matrix synthetic_embeddings(std::size_t m, std::size_t dim, std::size_t clusters, double spread,
                            Rng& rng) {
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

json report_json(const DivergenceReport& r) {
  return {{"kl", r.kl},       {"tv", r.tv},         {"bound", r.bound},
          {"c_max", r.c_max}, {"z_norm", r.z_norm}, {"bound_satisfied", r.bound_satisfied}};
}

void run_verify(const VerifyArgs& a) {
  const bool from_files = !a.index.empty();
  if (from_files != !a.embeddings.empty())
    throw UsageError("--index and --embeddings must be given together");
  std::optional<MultiIndex> fixed_index;
  Matrix fixed_emb;
  if (from_files) {
    fixed_index = load_index(a.index);
    fixed_emb = load_embeddings(a.embeddings);
    if (fixed_emb.rows() != fixed_index->num_items() || fixed_emb.cols() != fixed_index->dim)
      throw UsageError("embeddings do not match the index");
  } else if (a.dim == 0 || a.dim % 2 != 0) {
    throw UsageError("--dim must be even and positive");
  }

  json trials = json::array();
  std::size_t violations = 0;
  for (std::size_t t = 0; t < a.trials; ++t) {
    const std::uint64_t seed = a.seed + t;
    Rng rng(seed);
    Matrix emb = fixed_emb;
    MultiIndex idx;
    if (from_files) {
      idx = *fixed_index;
    } else {
      emb = synthetic_embeddings(a.items, a.dim, a.clusters, a.spread, rng);
      idx = build_index(emb, a.codebook_size, seed);
    }
    const auto pop = synthetic_pop(idx.num_items(), rng);
    std::normal_distribution<double> normal(0.0, a.query_scale);
    std::vector<double> z(idx.dim);
    for (double& v : z) v = normal(rng);
    const auto uni = verify_bound_uni(z, idx, emb);
    const auto pw = verify_bound_pop(z, idx, emb, pop);
    violations += !uni.bound_satisfied + !pw.bound_satisfied;
    trials.push_back({{"trial", t},
                      {"seed", seed},
                      {"K", idx.codebook_size},
                      {"M", idx.num_items()},
                      {"uni", report_json(uni)},
                      {"pop", report_json(pw)}});

    if (t == 0 && !a.curves.empty()) {
      std::vector<ItemId> order = popularity_order(pop);
      const auto soft = cumulative_curve(softmax_oracle(z, emb), order);
      const auto exact = cumulative_curve(prepare_exact(z, idx).probabilities(), order);
      const auto cu = cumulative_curve(closed_form_uni(z, emb, idx), order);
      const auto cp = cumulative_curve(closed_form_pop(z, emb, idx, pop), order);
      const auto flat = cumulative_curve(static_sampler(SamplerKind::uniform, idx.num_items(), nullptr).probabilities(), order);
      const auto pop_static = cumulative_curve(static_sampler(SamplerKind::popularity, idx.num_items(), &pop).probabilities(), order);
      Rng draw_rng(seed ^ 0x5eedULL);
      const auto drawn = sample_batch(prepare_uni(z, idx), a.curve_samples, draw_rng);
      const auto empirical = cumulative_curve(drawn, order);
      std::ofstream f(a.curves);
      if (!f) throw Error("cannot write '" + a.curves + "'");
      f << "rank,softmax,exact,uni,pop,uniform,popularity,uni_empirical\n";
      for (std::size_t r = 0; r < order.size(); ++r)
        f << soft[r].rank << ',' << soft[r].cumulative << ',' << exact[r].cumulative << ','
          << cu[r].cumulative << ',' << cp[r].cumulative << ',' << flat[r].cumulative << ','
          << pop_static[r].cumulative << ',' << empirical[r].cumulative << '\n';
    }
  }
  json out{{"trials", trials}, {"violations", violations}};
  OutputFile rep(a.report);
  rep.stream() << out.dump(2) << '\n';
  if (violations > 0) std::cerr << "warning: " << violations << " bound violations\n";
}

// ----------------------------------------------------------------- train

struct TrainArgs {
  std::string config, output_model, output_trace;
  std::vector<std::string> overrides;
};

void run_train(const TrainArgs& a) {
  std::ifstream f(a.config);
  if (!f) throw UsageError("cannot open config file '" + a.config + "'");
  auto kv = parse_key_values(f);
  for (const auto& o : a.overrides) {
    std::istringstream line(o);
    for (const auto& [k, v] : parse_key_values(line)) kv[k] = v;
  }
  PipelineConfig cfg = pipeline_config_from(kv);
  if (!a.output_model.empty()) cfg.output_model = a.output_model;
  if (!a.output_trace.empty()) cfg.output_trace = a.output_trace;
  fs::path data(cfg.dataset);
  if (data.is_relative()) data = fs::path(a.config).parent_path() / data;
  if (!fs::exists(data))
    throw UsageError("config key 'dataset': file '" + cfg.dataset + "' does not exist");

  InteractionDataset ds;
  try {
    ds = load_any_dataset(data.string(), LoadOptions{cfg.min_interactions, cfg.positive_threshold});
    if (!ds.is_split()) ds = split_holdout(ds, cfg.holdout_ratio, cfg.split_seed);
  } catch (const Error& e) {
    throw Error(std::string("[ingest] ") + e.what());
  }
  std::cerr << "[ingest] " << ds.num_users << " users, " << ds.num_items << " items, "
            << ds.num_interactions() << " interactions\n";
  if (cfg.train.sampler == TrainSampler::exact && ds.num_items >= 100'000)
    std::cerr << "warning: sampler_kind = exact costs O(M D) per query; with M = "
              << ds.num_items << " training will be slow\n";

  OutputFile trace(cfg.output_trace);
  auto& os = trace.stream();
  const std::size_t k = cfg.train.eval_k;
  os << "epoch,loss,ndcg@" << k << ",recall@" << k << ",sample_time_ms,train_time_ms\n";
  os << std::setprecision(10);
  TrainResult res;
  try {
    res = train(ds, cfg.train, [&](const EpochRecord& r) {
      os << r.epoch << ',' << r.loss << ',';
      if (r.eval) os << r.eval->ndcg << ',' << r.eval->recall;
      else os << ',';
      os << ',' << r.sample_time_ms << ',' << r.train_time_ms << '\n';
      os.flush();
    });
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw Error(std::string("[train] ") + e.what());
  }
  if (!cfg.output_model.empty()) save_model(cfg.output_model, res.params);
  std::cerr << "[evaluate] ndcg@" << k << " = " << res.final_eval.ndcg << ", recall@" << k
            << " = " << res.final_eval.recall << " over " << res.final_eval.users << " users\n";
}

// ----------------------------------------------------------------- bench

struct BenchArgs {
  std::string items = "10000,100000,1000000", kinds = "uniform,popularity,uni,pop,exact";
  std::string alias_sizes = "100,10000,1000000", output, alias_output;
  std::size_t codebook_size = 16, dim = 32, count = 200, trials = 7, queries = 20;
  std::size_t alias_draws = 1'000'000, max_exact_items = 2'000'000;
  std::uint64_t seed = 7;
  bool skip_alias = false;
};

void run_bench(const BenchArgs& a) {
  BenchOptions opt;
  opt.item_grid = parse_size_list(a.items);
  opt.kinds.clear();
  std::stringstream ks(a.kinds);
  for (std::string k; std::getline(ks, k, ',');) opt.kinds.push_back(parse_sampler_kind(k));
  opt.codebook_size = a.codebook_size;
  opt.dim = a.dim;
  opt.sample_count = a.count;
  opt.trials = a.trials;
  opt.queries_per_trial = a.queries;
  opt.seed = a.seed;
  opt.max_exact_items = a.max_exact_items;
  const auto reps = bench_scaling(opt, [](const BenchReport& r) {
    if (r.skipped) std::cerr << "note: " << r.note << " (M = " << r.num_items << ")\n";
    else
      std::cerr << r.kind << " M=" << r.num_items << " prepare " << r.prepare_ns << " ns, draw "
                << r.per_draw_ns << " ns\n";
  });
  OutputFile out(a.output);
  write_bench_csv(out.stream(), reps);
  if (!a.skip_alias) {
    const auto al = bench_alias(parse_size_list(a.alias_sizes), a.alias_draws, a.trials, a.seed);
    OutputFile aout(a.alias_output);
    aout.stream() << "table_size,per_draw_ns,trials\n";
    for (const auto& r : al) aout.stream() << r.size << ',' << r.per_draw_ns << ',' << r.trials << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-index negative sampling for softmax training"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Load, filter and split an interaction file");
  c_ingest->add_option("-i,--input", ingest.input, "user item [rating [timestamp]] lines")
      ->required()->check(CLI::ExistingFile);
  c_ingest->add_option("-o,--output", ingest.output, "binary dataset cache to write");
  c_ingest->add_option("--min-interactions", ingest.min_interactions, "per user and per item")
      ->capture_default_str();
  c_ingest->add_option("--threshold", ingest.threshold, "minimum rating counted as positive");
  c_ingest->add_option("--holdout-ratio", ingest.holdout_ratio, "train fraction per user")
      ->capture_default_str();
  c_ingest->add_option("--split-seed", ingest.split_seed)->capture_default_str();
  c_ingest->add_flag("--no-split", ingest.no_split, "skip the train/holdout split");

  IndexArgs index;
  auto* c_index = app.add_subcommand("build-index", "Quantize item embeddings into a multi-index");
  c_index->add_option("-e,--embeddings", index.embeddings, "model file or CSV of item vectors")
      ->required()->check(CLI::ExistingFile);
  c_index->add_option("-o,--output", index.output, "index file to write")->required();
  c_index->add_option("-K,--codebook-size", index.codebook_size)->capture_default_str();
  c_index->add_option("--kmeans-iters", index.kmeans_iters)->capture_default_str();
  c_index->add_option("--seed", index.seed)->capture_default_str();

  SampleArgs sample;
  auto* c_sample = app.add_subcommand("sample", "Draw items for each query vector");
  c_sample->add_option("--index", sample.index)->required()->check(CLI::ExistingFile);
  c_sample->add_option("-q,--queries", sample.queries, "CSV, one query vector per line")
      ->required()->check(CLI::ExistingFile);
  c_sample->add_option("-k,--kind", sample.kind, "exact, uni, pop, uniform or popularity")
      ->capture_default_str();
  c_sample->add_option("-T,--count", sample.count, "draws per query")->capture_default_str();
  c_sample->add_option("--dataset", sample.dataset, "dataset for popularity counts")
      ->check(CLI::ExistingFile);
  c_sample->add_option("--pop-function", sample.pop_function, "raw, log1p or pow075")
      ->capture_default_str();
  c_sample->add_option("--seed", sample.seed)->capture_default_str();
  c_sample->add_option("-o,--output", sample.output, "CSV output (default stdout)");

  VerifyArgs verify;
  auto* c_verify = app.add_subcommand(
      "verify", "Exact KL/TV of the MIDX proposals against softmax, with their upper bounds");
  c_verify->add_option("--index", verify.index, "index file (else synthetic instances)")
      ->check(CLI::ExistingFile);
  c_verify->add_option("--embeddings", verify.embeddings, "embeddings matching --index")
      ->check(CLI::ExistingFile);
  c_verify->add_option("--trials", verify.trials)->capture_default_str();
  c_verify->add_option("--items", verify.items, "synthetic M")->capture_default_str();
  c_verify->add_option("--dim", verify.dim, "synthetic D")->capture_default_str();
  c_verify->add_option("-K,--codebook-size", verify.codebook_size)->capture_default_str();
  c_verify->add_option("--clusters", verify.clusters)->capture_default_str();
  c_verify->add_option("--spread", verify.spread)->capture_default_str();
  c_verify->add_option("--query-scale", verify.query_scale)->capture_default_str();
  c_verify->add_option("--curve-samples", verify.curve_samples)->capture_default_str();
  c_verify->add_option("--seed", verify.seed)->capture_default_str();
  c_verify->add_option("--report", verify.report, "JSON report (default stdout)");
  c_verify->add_option("--curves", verify.curves, "CSV of cumulative curves for trial 0");

  TrainArgs train_args;
  auto* c_train = app.add_subcommand("train", "Train the VAE from a key = value config file");
  c_train->add_option("-c,--config", train_args.config)->required()->check(CLI::ExistingFile);
  c_train->add_option("--output-model", train_args.output_model, "overrides output_model");
  c_train->add_option("--output-trace", train_args.output_trace, "overrides output_trace");
  c_train->add_option("--set", train_args.overrides, "extra 'key=value' config entries");

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "Time sampler preparation and draws across M");
  c_bench->add_option("--items", bench.items, "comma-separated M grid")->capture_default_str();
  c_bench->add_option("--kinds", bench.kinds)->capture_default_str();
  c_bench->add_option("-K,--codebook-size", bench.codebook_size)->capture_default_str();
  c_bench->add_option("-D,--dim", bench.dim)->capture_default_str();
  c_bench->add_option("-T,--count", bench.count)->capture_default_str();
  c_bench->add_option("--trials", bench.trials)->capture_default_str();
  c_bench->add_option("--queries", bench.queries, "queries per trial")->capture_default_str();
  c_bench->add_option("--max-exact-items", bench.max_exact_items)->capture_default_str();
  c_bench->add_option("--seed", bench.seed)->capture_default_str();
  c_bench->add_option("-o,--output", bench.output, "scaling CSV (default stdout)");
  c_bench->add_option("--alias-sizes", bench.alias_sizes)->capture_default_str();
  c_bench->add_option("--alias-draws", bench.alias_draws)->capture_default_str();
  c_bench->add_option("--alias-output", bench.alias_output, "alias CSV (default stdout)");
  c_bench->add_flag("--skip-alias", bench.skip_alias);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*c_ingest) run_ingest(ingest);
    else if (*c_index) run_build_index(index);
    else if (*c_sample) run_sample(sample);
    else if (*c_verify) run_verify(verify);
    else if (*c_train) run_train(train_args);
    else if (*c_bench) run_bench(bench);
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
