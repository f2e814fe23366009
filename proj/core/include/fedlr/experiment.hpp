#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedlr/dataio.hpp"
#include "fedlr/evalmetrics.hpp"
#include "fedlr/federation.hpp"
#include "fedlr/mfmodel.hpp"

namespace fedlr {

// Experiment orchestration: sectioned key=value configs (fail-closed on
// unknown keys), environment and CLI overrides layered on top, and run
// artifacts written atomically into the output directory.

struct DataConfig {
  std::string path;
  RatingsFormat format = RatingsFormat::kDoubleColon;
  int min_interactions = 20;
  bool with_validation = true;
  int eval_negatives = 99;
};

struct ModelConfig {
  int d = 32;
  double init_std = 0.01;
};

struct TrainConfig {
  Method method = Method::kColr;
  int rank = 8;
  double topk_fraction = 0.1;
  LocalRankSampler rank_sampler = LocalRankSampler::kFixed;
  int local_rank = 0;     // 0 follows rank
  double lr = 0.1;
  double item_lr = -1.0;  // negative follows lr
  double weight_decay = 0.0;
  int epochs = 1;
  int batch_size = 64;
  int negative_ratio = 4;
  double cohort_fraction = 0.01;
  int rounds = 100;
  bool lr_scaling = true;
  double server_lr = 1.0;
  DecayMode decay_mode = DecayMode::kTouched;
  AggNorm agg_norm = AggNorm::kCohort;
  bool scolr_row_norm = false;
  int value_width = 4;
  int index_width = 4;
};

struct EvalConfig {
  int cadence = 20;  // evaluate every N rounds, and always after the last
  int topk = 10;
  bool rank_probe = false;
  EvalTarget target = EvalTarget::kTest;
  bool save_updates = false;  // dump client update matrices at eval rounds
};

struct CostConfig {
  CostParams params;
  double t_sim_s = 0.0;  // simulated per-round client compute, seconds
};

struct RunSection {
  std::uint64_t seed = 0;
  int workers = 1;
  std::string out = "out";
};

struct ExperimentConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  SecureConfig secure;
  EvalConfig eval;
  CostConfig cost;
  RunSection run;

  RoundConfig round_config() const;
  LocalConfig local_config() const;
  void validate() const;  // cross-field checks; errors name section.key
};

// Parses `[section]` + `key = value` lines; '#' and ';' start comments.
// Unknown sections or keys fail closed with their names in the message.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// FEDLR_SEED / FEDLR_WORKERS, applied between file values and CLI flags.
void apply_env_overrides(ExperimentConfig& cfg);

// Resolved-config provenance record written alongside results.
std::string config_json(const ExperimentConfig& cfg);

// ===== result records =====

struct MetricsRow {
  int round = 0;  // rounds completed when the evaluation ran
  std::string method;
  double hr = 0.0;
  double ndcg = 0.0;
  double n95_mean = 0.0;
  double n95_std = 0.0;
  double n99_mean = 0.0;
  double n99_std = 0.0;
  std::uint64_t up_bytes = 0;    // that round's straggler uplink
  std::uint64_t down_bytes = 0;  // per-client downlink
};

std::string metrics_csv(const std::vector<MetricsRow>& rows);

struct RunSummary {
  std::string method;
  int rank = 0;
  std::uint64_t up_bytes = 0;  // steady-state per-round bytes
  std::uint64_t down_bytes = 0;
  double hr = 0.0;  // last-round metrics
  double ndcg = 0.0;
  double best_hr = 0.0;
  double best_ndcg = 0.0;
  double t_comm_s = 0.0;
  double t_comp_s = 0.0;
  double t_round_s = 0.0;
};

std::string summary_csv(const std::vector<RunSummary>& runs);
std::string summary_text(const std::vector<RunSummary>& runs);  // aligned columns

struct HeBenchRow {
  std::string method;
  int k_or_r = 0;  // per-element count k, or packed-mode rank r
  double client_overhead_s = 0.0;
  double server_overhead_s = 0.0;
  double ciphertext_kb = 0.0;
  double plaintext_kb = 0.0;
  double comm_ratio = 0.0;
  std::int64_t measured_ops = 0;  // elements actually timed; < k means rate-extrapolated
};

std::string he_bench_csv(const std::vector<HeBenchRow>& rows);

struct LedgerCost {
  int rounds = 0;
  std::uint64_t up_bytes = 0;  // last recorded round's per-client bytes
  std::uint64_t down_bytes = 0;
  CostReport report;
};

// Sums per-round straggler transfer times over the ledger rows and applies
// the compute model once per round.
LedgerCost cost_from_ledger(const std::vector<LedgerRow>& rows, const CostConfig& cost);
std::string cost_csv(const LedgerCost& lc);
std::vector<LedgerRow> parse_ledger_csv(const std::string& text);

// ===== run driver =====

// Loads data, runs the configured federated training, and writes metrics.csv,
// ledger.csv, cost.csv, summary.csv/.txt, config.json (and he_bench.csv when
// secure aggregation is on) under cfg.run.out. Files are rewritten whole via
// temp-and-rename at every evaluation round, so readers never see a partial
// file and reruns are byte-identical.
RunSummary run_experiment(const ExperimentConfig& cfg);

void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace fedlr
