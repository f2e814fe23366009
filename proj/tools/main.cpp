#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fedlr/experiment.hpp"

namespace {

using namespace fedlr;

struct CommonOpts {
  std::string config;
  std::uint64_t seed = 0;
  int workers = 0;
  std::string out;
  CLI::Option* config_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* workers_opt = nullptr;
  CLI::Option* out_opt = nullptr;
};

void add_common(CLI::App* sub, CommonOpts& o) {
  o.config_opt = sub->add_option("--config", o.config, "experiment config file");
  o.seed_opt = sub->add_option("--seed", o.seed, "master seed (beats config and FEDLR_SEED)");
  o.workers_opt =
      sub->add_option("--workers", o.workers, "worker threads (beats config and FEDLR_WORKERS)");
  o.out_opt = sub->add_option("--out", o.out, "output directory (beats config)");
}

// precedence: config file < environment < explicit flags
ExperimentConfig resolve_config(const CommonOpts& o, bool config_required) {
  ExperimentConfig cfg;
  if (o.config_opt->count() > 0)
    cfg = load_config(o.config);
  else if (config_required)
    throw ConfigError("this command needs --config <path>");
  apply_env_overrides(cfg);
  if (o.seed_opt->count() > 0) cfg.run.seed = o.seed;
  if (o.workers_opt->count() > 0) {
    if (o.workers < 1) throw ConfigError("--workers must be >= 1");
    cfg.run.workers = o.workers;
  }
  if (o.out_opt->count() > 0) cfg.run.out = o.out;
  return cfg;
}

void require_data_path(const ExperimentConfig& cfg) {
  if (cfg.data.path.empty()) throw ConfigError("data.path is required (set it in [data])");
}

int cmd_prepare(const CommonOpts& o) {
  ExperimentConfig cfg = resolve_config(o, true);
  cfg.validate();
  require_data_path(cfg);
  const auto ratings = parse_ratings(cfg.data.path, cfg.data.format);
  const auto table = build_table(ratings, cfg.data.min_interactions);
  const auto split =
      leave_one_out(table, cfg.data.with_validation, cfg.data.eval_negatives, cfg.run.seed);
  write_file_atomic(cfg.run.out + "/split.tsv", serialize_split(split));
  write_file_atomic(cfg.run.out + "/negatives.tsv", serialize_negatives(split));
  std::ostringstream stats;
  stats << "users " << table.num_users() << "\n"
        << "items " << table.num_items() << "\n"
        << "interactions " << table.num_interactions() << "\n"
        << "train_interactions " << split.train.num_interactions() << "\n"
        << "eval_negatives_per_user " << cfg.data.eval_negatives << "\n";
  write_file_atomic(cfg.run.out + "/stats.txt", stats.str());
  std::cout << stats.str() << "split written to " << cfg.run.out << "\n";
  return 0;
}

int cmd_train(const CommonOpts& o) {
  ExperimentConfig cfg = resolve_config(o, true);
  require_data_path(cfg);
  const RunSummary summary = run_experiment(cfg);
  std::cout << summary_text({summary}) << "artifacts in " << cfg.run.out << "\n";
  return 0;
}

struct BenchOpts {
  int key_bits = 2048;
  int items = 3706;
  int d = 64;
  int cohort = 8;
  std::int64_t cap = 256;
  std::vector<int> ranks = {1, 2, 4, 8, 16, 32};
  std::vector<std::int64_t> elements = {64, 128, 256};
};

std::vector<std::vector<double>> synthetic_vectors(int cohort, std::int64_t len,
                                                   std::uint64_t seed, std::uint64_t tag) {
  std::vector<std::vector<double>> out(cohort);
  for (int c = 0; c < cohort; ++c) {
    Rng rng = Rng::keyed(seed, purpose::kSynthetic, tag, static_cast<std::uint64_t>(c));
    out[c].resize(static_cast<std::size_t>(len));
    for (auto& v : out[c]) v = 2.0 * rng.next_double() - 1.0;
  }
  return out;
}

int cmd_bench_he(const CommonOpts& o, const BenchOpts& b) {
  ExperimentConfig cfg = resolve_config(o, false);
  if (b.cohort < 2 || b.cohort > (1 << cfg.secure.codec.headroom_bits))
    throw ConfigError("--cohort must lie in [2, 2^headroom]");
  if (b.key_bits < 64 || b.key_bits % 2 != 0)
    throw ConfigError("--key-bits must be even and >= 64");
  const FixedPointCodec codec = cfg.secure.codec;
  codec.validate();

  std::cerr << "generating " << b.key_bits << "-bit keys...\n";
  const PaillierKeys keys = paillier_keygen(b.key_bits, cfg.run.seed);
  std::vector<HeBenchRow> rows;
  std::uint64_t tag = 0;

  // Per-element rows: measure up to --cap elements, then scale the rates out
  // to k. Sizes use the exact per-element formula, not the scaled measurement.
  for (const std::int64_t k : b.elements) {
    const std::int64_t m = std::min(k, b.cap);
    SecureAggReport rep;
    secure_aggregate(synthetic_vectors(b.cohort, m, cfg.run.seed, tag++), SecureMode::kPerElement,
                     codec, cfg.secure.slots_per_block, keys, cfg.run.seed, tag, &rep);
    const double scale = static_cast<double>(k) / static_cast<double>(m);
    HeBenchRow row;
    row.method = "topk";
    row.k_or_r = static_cast<int>(k);
    row.client_overhead_s = rep.client_encrypt_s * scale;
    row.server_overhead_s = rep.server_add_s * scale;
    row.ciphertext_kb =
        static_cast<double>(k) * static_cast<double>(keys.pub.ciphertext_bytes()) / 1024.0;
    PayloadDims dims;
    dims.k = k;
    row.plaintext_kb =
        static_cast<double>(payload_bytes(PayloadKind::kSparseFlat, dims)) / 1024.0;
    row.comm_ratio = row.ciphertext_kb / row.plaintext_kb;
    row.measured_ops = m;
    rows.push_back(row);
    std::cerr << "topk k=" << k << " done\n";
  }

  // Packed rows are measured in full: every limb is really encrypted and added.
  auto packed_row = [&](const std::string& method, int k_or_r, std::int64_t n_slots,
                        std::uint64_t plain_bytes) {
    SecureAggReport rep;
    secure_aggregate(synthetic_vectors(b.cohort, n_slots, cfg.run.seed, tag++),
                     SecureMode::kPacked, codec, cfg.secure.slots_per_block, keys, cfg.run.seed,
                     tag, &rep);
    HeBenchRow row;
    row.method = method;
    row.k_or_r = k_or_r;
    row.client_overhead_s = rep.client_encrypt_s;
    row.server_overhead_s = rep.server_add_s;
    row.ciphertext_kb = static_cast<double>(rep.ciphertext_bytes) / 1024.0;
    row.plaintext_kb = static_cast<double>(plain_bytes) / 1024.0;
    row.comm_ratio = row.ciphertext_kb / row.plaintext_kb;
    row.measured_ops = n_slots;
    rows.push_back(row);
    std::cerr << method << " " << k_or_r << " done\n";
  };

  for (const int r : b.ranks) {
    PayloadDims dims;
    dims.n = b.items;
    dims.r = r;
    packed_row("colr", r, static_cast<std::int64_t>(r) * b.items,
               payload_bytes(PayloadKind::kColr, dims));
  }
  {
    PayloadDims dims;
    dims.d = b.d;
    dims.n = b.items;
    packed_row("fedmf", b.d, static_cast<std::int64_t>(b.d) * b.items,
               payload_bytes(PayloadKind::kDense, dims));
  }

  const std::string csv = he_bench_csv(rows);
  write_file_atomic(cfg.run.out + "/he_bench.csv", csv);
  std::cout << csv << "written to " << cfg.run.out << "/he_bench.csv\n";
  return 0;
}

Eigen::MatrixXd read_matrix_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open matrix file: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) {
      char* end = nullptr;
      const double v = std::strtod(field.c_str(), &end);
      if (field.empty() || end != field.c_str() + field.size())
        throw ParseError(path + ": bad number '" + field + "'", line_no);
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError(path + ": ragged row", line_no);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(path + ": empty matrix");
  Eigen::MatrixXd m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

int cmd_analyze_rank(const CommonOpts& o, const std::string& updates_dir) {
  ExperimentConfig cfg = resolve_config(o, false);
  namespace fs = std::filesystem;
  if (!fs::is_directory(updates_dir))
    throw ConfigError("--updates must name a directory: " + updates_dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(updates_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".csv")
      files.push_back(entry.path());
  if (files.empty()) throw ConfigError("no .csv matrices found in " + updates_dir);
  std::sort(files.begin(), files.end());

  std::ostringstream csv;
  csv << "file,n95,n99\n";
  double sum95 = 0.0, sum99 = 0.0;
  for (const auto& f : files) {
    const Eigen::MatrixXd m = read_matrix_csv(f.string());
    const int n95 = effective_rank(m, 0.95);
    const int n99 = effective_rank(m, 0.99);
    sum95 += n95;
    sum99 += n99;
    csv << f.filename().string() << ',' << n95 << ',' << n99 << '\n';
  }
  write_file_atomic(cfg.run.out + "/rank_probe.csv", csv.str());
  const double count = static_cast<double>(files.size());
  std::cout << csv.str() << "mean n95 " << sum95 / count << ", mean n99 " << sum99 / count
            << " over " << files.size() << " matrices\n"
            << "written to " << cfg.run.out << "/rank_probe.csv\n";
  return 0;
}

int cmd_cost(const CommonOpts& o, const std::string& ledger_path) {
  ExperimentConfig cfg = resolve_config(o, false);
  std::ifstream is(ledger_path, std::ios::binary);
  if (!is) throw ConfigError("cannot open ledger file: " + ledger_path);
  std::ostringstream buf;
  buf << is.rdbuf();
  const auto rows = parse_ledger_csv(buf.str());
  const LedgerCost lc = cost_from_ledger(rows, cfg.cost);
  const std::string csv = cost_csv(lc);
  write_file_atomic(cfg.run.out + "/cost.csv", csv);
  std::cout << csv << "written to " << cfg.run.out << "/cost.csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated low-rank recommendation workbench"};
  app.require_subcommand(1);

  CommonOpts prep_opts, train_opts, bench_opts_common, rank_opts_common, cost_opts_common;
  BenchOpts bench;
  std::string updates_dir, ledger_path;

  CLI::App* prepare = app.add_subcommand("prepare", "build the interaction table and eval split");
  add_common(prepare, prep_opts);

  CLI::App* train = app.add_subcommand("train", "run a federated training experiment");
  add_common(train, train_opts);

  CLI::App* bench_he =
      app.add_subcommand("bench-he", "measure homomorphic aggregation overheads and sizes");
  add_common(bench_he, bench_opts_common);
  bench_he->add_option("--key-bits", bench.key_bits, "Paillier modulus bits (default 2048)");
  bench_he->add_option("--items", bench.items, "item count N for payload shapes");
  bench_he->add_option("--dim", bench.d, "dense model dimension d");
  bench_he->add_option("--cohort", bench.cohort, "clients per aggregation");
  bench_he->add_option("--cap", bench.cap, "max elements measured per-element before rate scaling");
  bench_he->add_option("--ranks", bench.ranks, "packed-mode ranks to measure");
  bench_he->add_option("--elements", bench.elements, "per-element counts to measure");

  CLI::App* analyze =
      app.add_subcommand("analyze-rank", "effective-rank probe over saved update matrices");
  add_common(analyze, rank_opts_common);
  analyze->add_option("--updates", updates_dir, "directory of update matrices (.csv)")
      ->required();

  CLI::App* cost = app.add_subcommand("cost", "deployment cost report from a traffic ledger");
  add_common(cost, cost_opts_common);
  cost->add_option("--ledger", ledger_path, "ledger.csv produced by train")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (prepare->parsed()) return cmd_prepare(prep_opts);
    if (train->parsed()) return cmd_train(train_opts);
    if (bench_he->parsed()) return cmd_bench_he(bench_opts_common, bench);
    if (analyze->parsed()) return cmd_analyze_rank(rank_opts_common, updates_dir);
    if (cost->parsed()) return cmd_cost(cost_opts_common, ledger_path);
    std::cerr << "no command selected\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}
