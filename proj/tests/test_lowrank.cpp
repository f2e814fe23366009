#include <doctest.h>

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "fedlr/lowrank.hpp"

using namespace fedlr;

TEST_CASE("projection regeneration is bitwise deterministic") {
  const ProjectionSpec spec{16, 4, 77};
  const Eigen::MatrixXd b1 = sample_b(spec, 3);
  const Eigen::MatrixXd b2 = sample_b(spec, 3);
  CHECK((b1 - b2).isZero(0.0));
  CHECK(b1.rows() == 16);
  CHECK(b1.cols() == 4);

  // round and seed both move the matrix
  CHECK(!(sample_b(spec, 4) - b1).isZero(0.0));
  CHECK(!(sample_b(ProjectionSpec{16, 4, 78}, 3) - b1).isZero(0.0));
}

TEST_CASE("projection entries have variance 1/r_g") {
  const int d = 64, r = 32;
  double sum = 0.0, sumsq = 0.0;
  const int rounds = 10;
  for (int t = 0; t < rounds; ++t) {
    const Eigen::MatrixXd b = sample_b(ProjectionSpec{d, r, 2024}, t);
    sum += b.sum();
    sumsq += b.array().square().sum();
  }
  const double n = static_cast<double>(d) * r * rounds;  // 20480 draws
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 4.0 / std::sqrt(32.0 * n));  // 4 se, entry sd = 1/sqrt(32)
  CHECK(var == doctest::Approx(1.0 / 32.0).epsilon(0.05));
}

TEST_CASE("row selection draws a uniform subset without replacement") {
  Rng rng(31);
  const auto sel = sample_selection(8, 3, rng);
  CHECK(sel.r_g == 8);
  CHECK(sel.r_u() == 3);
  std::set<std::int32_t> uniq(sel.rows.begin(), sel.rows.end());
  CHECK(uniq.size() == 3);
  for (const auto row : sel.rows) {
    CHECK(row >= 0);
    CHECK(row < 8);
  }

  // full-width selection is a permutation
  Rng rng2(32);
  const auto full = sample_selection(5, 5, rng2);
  std::set<std::int32_t> all(full.rows.begin(), full.rows.end());
  CHECK(all.size() == 5);
}

TEST_CASE("selected subsets are uniform over C(8,2)") {
  // 28 subsets, 28000 draws: expected 1000 each, chi^2 df=27,
  // critical value 55.48 at alpha=0.001
  Rng rng(909);
  std::map<std::pair<int, int>, int> counts;
  const int n = 28000;
  for (int i = 0; i < n; ++i) {
    const auto sel = sample_selection(8, 2, rng);
    int a = sel.rows[0], b = sel.rows[1];
    if (a > b) std::swap(a, b);
    ++counts[{a, b}];
  }
  CHECK(counts.size() == 28);
  double chi2 = 0.0;
  for (const auto& [subset, c] : counts) chi2 += (c - 1000.0) * (c - 1000.0) / 1000.0;
  CHECK(chi2 < 55.48);
}

TEST_CASE("expand scatters local rows to their global positions") {
  SelectionMatrix sel;
  sel.r_g = 4;
  sel.rows = {2, 0};
  Eigen::MatrixXd a_u(2, 3);
  a_u << 1, 2, 3, 4, 5, 6;
  const Eigen::MatrixXd full = expand_selection(sel, a_u);
  REQUIRE(full.rows() == 4);
  REQUIRE(full.cols() == 3);
  CHECK((full.row(2) - a_u.row(0)).isZero(0.0));
  CHECK((full.row(0) - a_u.row(1)).isZero(0.0));
  CHECK(full.row(1).isZero(0.0));
  CHECK(full.row(3).isZero(0.0));
}

TEST_CASE("selected_columns picks projection columns in local order") {
  Eigen::MatrixXd b(3, 4);
  b << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
  SelectionMatrix sel;
  sel.r_g = 4;
  sel.rows = {2, 0};
  const Eigen::MatrixXd view = selected_columns(b, sel);
  REQUIRE(view.rows() == 3);
  REQUIRE(view.cols() == 2);
  CHECK((view.col(0) - b.col(2)).isZero(0.0));
  CHECK((view.col(1) - b.col(0)).isZero(0.0));

  // the two ops are adjoint: B * expand(sel, a) == selected_columns(B, sel) * a
  Eigen::MatrixXd a_u(2, 5);
  Rng rng(12);
  for (int j = 0; j < 5; ++j)
    for (int i = 0; i < 2; ++i) a_u(i, j) = rng.next_gaussian();
  CHECK((b * expand_selection(sel, a_u) - view * a_u).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("merge_global adds the scaled product") {
  Rng rng(5);
  const int d = 6, r = 3, n = 9;
  Eigen::MatrixXd q(d, n), b(d, r), a(r, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < d; ++i) q(i, j) = rng.next_gaussian();
  for (int j = 0; j < r; ++j)
    for (int i = 0; i < d; ++i) b(i, j) = rng.next_gaussian();
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < r; ++i) a(i, j) = rng.next_gaussian();

  const Eigen::MatrixXd before = q;
  merge_global(q, b, a, 0.7);
  const Eigen::MatrixXd want = before + 0.7 * (b * a);
  CHECK((q - want).lpNorm<Eigen::Infinity>() < 1e-12);

  // default server_lr is 1
  Eigen::MatrixXd q2 = before;
  merge_global(q2, b, a);
  CHECK((q2 - (before + b * a)).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("learning-rate compensation follows sqrt(r/d)") {
  CHECK(scaled_lr(0.5, 16, 64, true) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(scaled_lr(0.5, 64, 64, true) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(scaled_lr(0.5, 1, 64, true) == doctest::Approx(0.0625).epsilon(1e-12));
  CHECK(scaled_lr(0.5, 16, 64, false) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("compression factor crosses 1 when the factorization stops paying") {
  // dense elements / low-rank elements = n*d / (r*(n+d))
  CHECK(compression_factor(3706, 64, 1) == doctest::Approx(237184.0 / 3770.0).epsilon(1e-12));
  CHECK(compression_factor(3706, 64, 16) == doctest::Approx(237184.0 / 60320.0).epsilon(1e-12));
  CHECK(compression_factor(3706, 64, 16) > 1.0);
  CHECK(compression_factor(3706, 64, 64) == doctest::Approx(237184.0 / 241280.0).epsilon(1e-12));
  CHECK(compression_factor(3706, 64, 64) < 1.0);  // full rank costs more than dense
}
