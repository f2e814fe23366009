#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "fedlr/errors.hpp"
#include "fedlr/rng.hpp"

namespace fedlr {

// Frozen random projection shared by all clients in a round. Only the 8-byte
// seed travels; both sides regenerate the matrix from (seed, round).
struct ProjectionSpec {
  int d = 0;
  int r_g = 0;             // global rank = projection columns
  std::uint64_t seed = 0;  // what the downlink actually carries
};

// d x r_g with i.i.d. N(0, 1/r_g) entries, column-major fill order from the
// (seed, round)-keyed stream. Bitwise deterministic.
Eigen::MatrixXd sample_b(const ProjectionSpec& spec, int round);

// Per-client row selection: `rows[k]` is the global coefficient row that local
// row k writes to. Drawn as the first r_u entries of a Fisher-Yates shuffle of
// [0, r_g), so the selected set is uniform over r_u-subsets.
struct SelectionMatrix {
  int r_g = 0;
  std::vector<std::int32_t> rows;
  int r_u() const { return static_cast<int>(rows.size()); }
};

SelectionMatrix sample_selection(int r_g, int r_u, Rng& rng);

// Scatters the r_u x N local coefficients into r_g x N (unselected rows zero).
Eigen::MatrixXd expand_selection(const SelectionMatrix& sel, const Eigen::MatrixXd& a_u);

// The client-side view of the shared projection: the selected columns of b,
// d x r_u, in local row order.
Eigen::MatrixXd selected_columns(const Eigen::MatrixXd& b, const SelectionMatrix& sel);

// q += server_lr * b * a without materializing an intermediate the size of q.
void merge_global(Eigen::MatrixXd& q, const Eigen::MatrixXd& b, const Eigen::MatrixXd& a,
                  double server_lr = 1.0);

// sqrt(r/d) step-size compensation for the projection's operator norm; applies
// to the coefficient learning rate only.
double scaled_lr(double eta, int r, int d, bool enabled);

// Uplink elements dense / low-rank: (n*d) / (r*(n+d)). Values below 1 mean the
// factorization costs more than the dense update at that rank.
double compression_factor(int n, int d, int r);

}  // namespace fedlr
