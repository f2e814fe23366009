#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "fedlr/compressors.hpp"
#include "fedlr/dataio.hpp"
#include "fedlr/evalmetrics.hpp"
#include "fedlr/lowrank.hpp"
#include "fedlr/mfmodel.hpp"
#include "fedlr/secureagg.hpp"

namespace fedlr {

// Round-based federated training driver. The server owns the item matrix and
// a traffic ledger, nothing else; user embeddings live in a ClientPool that
// never appears in an upload payload type (checked below at compile time).

enum class Method { kFedMf, kColr, kScolr, kFedMfTopk, kFedMfSvd };

std::string method_name(Method m);
Method method_from_name(const std::string& name);  // ConfigError on unknown names

enum class AggNorm {
  kCohort,      // divide by the summed interaction counts of the round's cohort
  kPopulation,  // divide by the summed interaction counts of all users
};

enum class LocalRankSampler {
  kFixed,    // every client trains local_rank rows
  kUniform,  // per (round, user) draw from {1, ..., rank}
};

struct SecureConfig {
  SecureMode mode = SecureMode::kOff;
  int key_bits = 256;
  FixedPointCodec codec;
  int slots_per_block = 8096;
};

struct RoundConfig {
  Method method = Method::kColr;
  double cohort_fraction = 0.01;
  int rounds = 100;
  int rank = 8;               // projection columns (colr/scolr) or kept rank (svd)
  double topk_fraction = 0.1; // kept fraction of entries (topk)
  LocalRankSampler rank_sampler = LocalRankSampler::kFixed;
  int local_rank = 0;         // scolr rows per client; 0 means rank
  bool lr_scaling = true;     // sqrt(r/d) compensation on the coefficient step
  double server_lr = 1.0;
  AggNorm agg_norm = AggNorm::kCohort;
  bool scolr_row_norm = false;  // normalize each aggregated row by the weight that touched it
  SecureConfig secure;
  int value_width = 4;
  int index_width = 4;
  std::uint64_t seed = 0;
};

// ===== cohort sampling =====

// Epoch-style sampler: a seeded permutation of the population is consumed
// ceil(fraction * population) users at a time and reshuffled when exhausted,
// so every user appears exactly once per epoch. A user drawn just before a
// reshuffle can resurface right after it; the sampler swaps the repeat with
// the next non-member so rounds never contain duplicates.
class CohortSampler {
 public:
  CohortSampler(int population, double fraction, std::uint64_t seed);

  int cohort_size() const { return m_; }
  std::vector<int> next();  // ascending user indices

 private:
  void reshuffle();

  int population_ = 0;
  int m_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<int> perm_;
  std::size_t cursor_ = 0;
  std::uint64_t epoch_ = 0;
};

// Replays a fresh sampler up to `round` and returns that round's cohort.
std::vector<int> sample_cohort(int population, double fraction, std::uint64_t seed, int round);

// ===== aggregation =====

// sum_i weights[i] * updates[i] / norm, accumulated in index order.
Eigen::MatrixXd aggregate_weighted(const std::vector<double>& weights,
                                   const std::vector<Eigen::MatrixXd>& updates, double norm);

struct ScolrContribution {
  double weight = 0.0;
  SelectionMatrix sel;
  Eigen::MatrixXd a;  // r_u x n, local row order
};

// Scatters each contribution's rows to their global positions and sums. With
// per_row_norm each row divides by the weight that actually wrote to it
// (untouched rows stay zero); otherwise the whole matrix divides by norm.
Eigen::MatrixXd aggregate_scolr(const std::vector<ScolrContribution>& parts, int r_g,
                                int n_items, double norm, bool per_row_norm);

// ===== traffic ledger =====

struct RoundTraffic {
  std::uint64_t up_max = 0;    // straggler's uplink bytes this round
  std::uint64_t down_max = 0;  // per-client downlink bytes this round
  std::uint64_t up_total = 0;
  std::uint64_t down_total = 0;
  int cohort = 0;
};

struct LedgerRow {
  int round = 0;
  std::string method;
  int cohort = 0;
  std::uint64_t up_max = 0;
  std::uint64_t down_max = 0;
  std::uint64_t up_total = 0;
  std::uint64_t down_total = 0;
  std::uint64_t cum_up = 0;    // running totals over all rounds so far
  std::uint64_t cum_down = 0;
};

class PayloadLedger {
 public:
  void record(int round, const std::string& method, const RoundTraffic& traffic);
  const std::vector<LedgerRow>& rows() const { return rows_; }
  std::uint64_t cum_up() const { return cum_up_; }
  std::uint64_t cum_down() const { return cum_down_; }
  std::string to_csv() const;

 private:
  std::vector<LedgerRow> rows_;
  std::uint64_t cum_up_ = 0;
  std::uint64_t cum_down_ = 0;
};

// ===== simulator =====

struct ServerState {
  GlobalModel model;
  int round = 0;
  PayloadLedger ledger;
};

struct ClientPool {
  std::vector<ClientState> clients;  // indexed by user
};

struct RankProbe {
  double mean95 = 0.0;  // effective rank at 0.95 energy, cohort mean
  double std95 = 0.0;
  double mean99 = 0.0;
  double std99 = 0.0;
};

struct RoundResult {
  int round = 0;  // the round that just ran
  std::vector<int> cohort;
  RoundTraffic traffic;
  bool probe_valid = false;
  RankProbe probe;
  bool he_valid = false;
  SecureAggReport he;
  std::vector<Eigen::MatrixXd> updates;  // per-client dense equivalents, on request only
};

struct SimulatorOptions {
  int workers = 1;
  bool rank_probe = false;
  bool keep_updates = false;  // fill RoundResult::updates (memory-heavy)
};

class Simulator {
 public:
  // The split must outlive the simulator. Client embeddings and the item
  // matrix are seeded from cfg.seed, so two simulators with equal inputs run
  // identical training.
  Simulator(const EvalSplit& split, const RoundConfig& cfg, const LocalConfig& local, int d,
            double init_std, const SimulatorOptions& opts);

  RoundResult run_round();
  EvalResult evaluate(int k, EvalTarget target = EvalTarget::kTest) const;

  const ServerState& server() const { return server_; }
  const ClientPool& pool() const { return pool_; }
  int round() const { return server_.round; }
  double score(int user, int item) const;

 private:
  RoundResult run_dense_family(const std::vector<int>& cohort);
  RoundResult run_colr(const std::vector<int>& cohort);
  RoundResult run_scolr(const std::vector<int>& cohort);
  double agg_norm_for(const std::vector<double>& weights) const;
  RankProbe probe_from(std::vector<std::pair<int, int>>& ranks) const;

  const EvalSplit* split_;
  RoundConfig cfg_;
  LocalConfig local_;
  SimulatorOptions opts_;
  ServerState server_;
  ClientPool pool_;
  CohortSampler sampler_;
  PaillierKeys keys_;  // populated only when secure aggregation is on
  double population_weight_ = 0.0;
};

// Upload payloads must be free of user embeddings; the member name `p` is
// reserved for them throughout the model code, so its absence is checkable.
template <typename T>
concept CarriesUserEmbedding = requires(T t) { t.p; };

static_assert(!CarriesUserEmbedding<DenseResult>);
static_assert(!CarriesUserEmbedding<LowRankResult>);
static_assert(!CarriesUserEmbedding<SparsePayload>);
static_assert(!CarriesUserEmbedding<SvdPayload>);
static_assert(!CarriesUserEmbedding<ElementPayload>);
static_assert(!CarriesUserEmbedding<SecurePayload>);
static_assert(!CarriesUserEmbedding<ServerState>);

}  // namespace fedlr
