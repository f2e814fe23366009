#include "fedlr/lowrank.hpp"

#include <cmath>
#include <numeric>

namespace fedlr {

Eigen::MatrixXd sample_b(const ProjectionSpec& spec, int round) {
  if (spec.d < 1 || spec.r_g < 1) throw ConfigError("projection dims must be positive");
  Rng rng = Rng::keyed(spec.seed, purpose::kProjection, static_cast<std::uint64_t>(round));
  const double scale = 1.0 / std::sqrt(static_cast<double>(spec.r_g));
  Eigen::MatrixXd b(spec.d, spec.r_g);
  for (int j = 0; j < spec.r_g; ++j)
    for (int i = 0; i < spec.d; ++i) b(i, j) = scale * rng.next_gaussian();
  return b;
}

SelectionMatrix sample_selection(int r_g, int r_u, Rng& rng) {
  if (r_u < 1 || r_u > r_g)
    throw ConfigError("local rank " + std::to_string(r_u) + " outside [1, " +
                      std::to_string(r_g) + "]");
  std::vector<std::int32_t> perm(r_g);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  perm.resize(r_u);
  return SelectionMatrix{r_g, std::move(perm)};
}

Eigen::MatrixXd expand_selection(const SelectionMatrix& sel, const Eigen::MatrixXd& a_u) {
  if (a_u.rows() != sel.r_u()) throw TrainError("expand_selection: row count mismatch");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(sel.r_g, a_u.cols());
  std::vector<bool> seen(sel.r_g, false);
  for (int k = 0; k < sel.r_u(); ++k) {
    const std::int32_t row = sel.rows[k];
    if (row < 0 || row >= sel.r_g) throw TrainError("expand_selection: row index out of range");
    if (seen[row]) throw TrainError("expand_selection: duplicate selected row");
    seen[row] = true;
    out.row(row) = a_u.row(k);
  }
  return out;
}

Eigen::MatrixXd selected_columns(const Eigen::MatrixXd& b, const SelectionMatrix& sel) {
  if (sel.r_g != b.cols()) throw TrainError("selected_columns: selection built for different r_g");
  Eigen::MatrixXd out(b.rows(), sel.r_u());
  for (int k = 0; k < sel.r_u(); ++k) out.col(k) = b.col(sel.rows[k]);
  return out;
}

void merge_global(Eigen::MatrixXd& q, const Eigen::MatrixXd& b, const Eigen::MatrixXd& a,
                  double server_lr) {
  if (b.rows() != q.rows() || b.cols() != a.rows() || a.cols() != q.cols())
    throw TrainError("merge_global: dimension mismatch");
  q.noalias() += server_lr * (b * a);
}

double scaled_lr(double eta, int r, int d, bool enabled) {
  if (r < 1 || d < 1 || r > d) throw ConfigError("scaled_lr requires 1 <= r <= d");
  if (!enabled) return eta;
  return eta * std::sqrt(static_cast<double>(r) / static_cast<double>(d));
}

double compression_factor(int n, int d, int r) {
  if (n < 1 || d < 1 || r < 1) throw ConfigError("compression_factor: dims must be positive");
  return (static_cast<double>(n) * d) / (static_cast<double>(r) * (n + d));
}

}  // namespace fedlr
