#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>

#include "fedlr/dataio.hpp"
#include "fedlr/errors.hpp"

namespace fedlr {

// Zero-based rank of the held-out item among its negatives, pessimistic on
// ties: negatives scoring equal to the test item count as ranked above it.
int rank_test_item(double test_score, std::span<const double> negative_scores);

bool hit_at_k(int rank, int k);
double ndcg_at_k(int rank, int k);  // 1 / log2(rank + 2) inside the cutoff, else 0

struct EvalResult {
  double hr_pct = 0.0;
  double ndcg_pct = 0.0;
};

enum class EvalTarget { kTest, kValidation };

// Mean leave-one-out HR@k / NDCG@k over all users, as percentages. scorer(u, i)
// returns the model score of item i for user u; any monotone transform of the
// predicted probability works since only per-user orderings matter.
EvalResult evaluate(const EvalSplit& split, const std::function<double(int, int)>& scorer,
                    int k, int workers = 1, EvalTarget target = EvalTarget::kTest);

// Smallest m such that the top-m squared singular values reach
// threshold * total spectral energy; 0 for the zero matrix.
int effective_rank(const Eigen::MatrixXd& m, double threshold);
// Same rule on a precomputed spectrum (squared singular values, any order).
int effective_rank_from_spectrum(std::span<const double> squared_singular_values,
                                 double threshold);

// ===== round-time cost model =====

struct CostParams {
  double bandwidth_down_mib_s = 0.75;  // server -> client
  double bandwidth_up_mib_s = 0.25;    // client -> server
  double r_comp = 7.0;                 // client compute slowdown factor
  double c_comp = 10.0;                // fixed per-round client overhead, seconds
  double t_server = 0.0;               // server-side per-round seconds
};

struct CostReport {
  double t_comm_s = 0.0;
  double t_comp_s = 0.0;
  double t_round_s = 0.0;  // t_comm + t_comp
};

// up/down are per-client bytes per round (the straggler's when they differ);
// t_sim_max_s is the slowest client's simulated local step time per round.
// Bandwidth divides MiB (2^20 bytes) by seconds.
CostReport cost_model(std::uint64_t up_bytes, std::uint64_t down_bytes, double t_sim_max_s,
                      int rounds, const CostParams& params);

}  // namespace fedlr
