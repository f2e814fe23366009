#include "fedlr/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "fedlr/parallel.hpp"

namespace fedlr {

int rank_test_item(double test_score, std::span<const double> negative_scores) {
  int rank = 0;
  for (const double s : negative_scores)
    if (s >= test_score) ++rank;
  return rank;
}

bool hit_at_k(int rank, int k) { return rank < k; }

double ndcg_at_k(int rank, int k) {
  if (rank >= k) return 0.0;
  return 1.0 / std::log2(static_cast<double>(rank) + 2.0);
}

EvalResult evaluate(const EvalSplit& split, const std::function<double(int, int)>& scorer,
                    int k, int workers, EvalTarget target) {
  if (k < 1) throw ConfigError("eval cutoff k must be >= 1");
  const int m = split.train.num_users();
  const auto& held_out =
      target == EvalTarget::kTest ? split.test_item : split.validation_item;
  if (held_out.empty())
    throw ConfigError("requested evaluation split was not built");

  std::vector<double> hr(m), ndcg(m);
  parallel_for(static_cast<std::size_t>(m), workers, [&](std::size_t u) {
    const int user = static_cast<int>(u);
    const double test_score = scorer(user, held_out[user]);
    const auto& negs = split.negatives[user];
    std::vector<double> neg_scores;
    neg_scores.reserve(negs.size());
    for (const auto item : negs) neg_scores.push_back(scorer(user, item));
    const int rank = rank_test_item(test_score, neg_scores);
    hr[u] = hit_at_k(rank, k) ? 1.0 : 0.0;
    ndcg[u] = ndcg_at_k(rank, k);
  });

  // reduce in user order so worker count never changes the sum
  double hr_sum = 0.0, ndcg_sum = 0.0;
  for (int u = 0; u < m; ++u) {
    hr_sum += hr[u];
    ndcg_sum += ndcg[u];
  }
  return EvalResult{100.0 * hr_sum / m, 100.0 * ndcg_sum / m};
}

int effective_rank_from_spectrum(std::span<const double> squared_singular_values,
                                 double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0))
    throw ConfigError("effective_rank threshold must lie in (0, 1]");
  std::vector<double> spec(squared_singular_values.begin(), squared_singular_values.end());
  for (auto& v : spec) v = std::max(v, 0.0);  // eigensolver round-off guard
  std::sort(spec.begin(), spec.end(), std::greater<double>());
  const double total = std::accumulate(spec.begin(), spec.end(), 0.0);
  if (total <= 0.0) return 0;
  double cum = 0.0;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    cum += spec[i];
    if (cum >= threshold * total) return static_cast<int>(i) + 1;
  }
  return static_cast<int>(spec.size());
}

int effective_rank(const Eigen::MatrixXd& m, double threshold) {
  // Squared singular values = eigenvalues of the smaller Gram matrix; for the
  // d x N update probes this is a d x d problem instead of an N-sized SVD.
  Eigen::MatrixXd gram;
  if (m.rows() <= m.cols())
    gram = m * m.transpose();
  else
    gram = m.transpose() * m;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw TrainError("effective_rank: eigensolver failed");
  const auto& ev = eig.eigenvalues();
  return effective_rank_from_spectrum(std::span<const double>(ev.data(), ev.size()), threshold);
}

CostReport cost_model(std::uint64_t up_bytes, std::uint64_t down_bytes, double t_sim_max_s,
                      int rounds, const CostParams& params) {
  if (rounds < 0) throw ConfigError("cost_model: rounds must be >= 0");
  if (params.bandwidth_down_mib_s <= 0.0 || params.bandwidth_up_mib_s <= 0.0)
    throw ConfigError("cost_model: bandwidths must be positive");
  constexpr double kMib = 1024.0 * 1024.0;
  const double per_round_comm = static_cast<double>(down_bytes) / kMib / params.bandwidth_down_mib_s +
                                static_cast<double>(up_bytes) / kMib / params.bandwidth_up_mib_s;
  const double per_round_comp = (params.r_comp * t_sim_max_s + params.c_comp) + params.t_server;
  CostReport rep;
  rep.t_comm_s = per_round_comm * rounds;
  rep.t_comp_s = per_round_comp * rounds;
  rep.t_round_s = rep.t_comm_s + rep.t_comp_s;
  return rep;
}

}  // namespace fedlr
