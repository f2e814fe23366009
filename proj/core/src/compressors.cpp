#include "fedlr/compressors.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace fedlr {

SparsePayload topk_compress(const Eigen::MatrixXd& m, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ConfigError("topk fraction must lie in (0, 1]");
  const std::int64_t total = static_cast<std::int64_t>(m.rows()) * m.cols();
  const std::int64_t k =
      std::min<std::int64_t>(total, static_cast<std::int64_t>(std::ceil(fraction * total)));

  std::vector<std::int64_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  const int cols = static_cast<int>(m.cols());
  auto coord = [&](std::int64_t flat) {
    return std::pair<int, int>(static_cast<int>(flat / cols), static_cast<int>(flat % cols));
  };
  // nth_element then sort of the head keeps this near O(total) for small k
  auto cmp = [&](std::int64_t a, std::int64_t b) {
    const auto [ra, ca] = coord(a);
    const auto [rb, cb] = coord(b);
    const double ma = std::abs(m(ra, ca));
    const double mb = std::abs(m(rb, cb));
    if (ma != mb) return ma > mb;
    return a < b;  // flat row-major order == (row, col) lexicographic
  };
  std::nth_element(order.begin(), order.begin() + k, order.end(), cmp);
  order.resize(k);
  std::sort(order.begin(), order.end());  // emit by (row, col)

  SparsePayload out;
  out.rows = static_cast<int>(m.rows());
  out.cols = cols;
  out.row_idx.reserve(k);
  out.col_idx.reserve(k);
  out.values.reserve(k);
  for (const auto flat : order) {
    const auto [r, c] = coord(flat);
    out.row_idx.push_back(r);
    out.col_idx.push_back(c);
    out.values.push_back(m(r, c));
  }
  return out;
}

Eigen::MatrixXd topk_decompress(const SparsePayload& payload) {
  if (payload.row_idx.size() != payload.values.size() ||
      payload.col_idx.size() != payload.values.size())
    throw TrainError("sparse payload: ragged entry arrays");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(payload.rows, payload.cols);
  std::set<std::pair<std::int32_t, std::int32_t>> seen;
  for (std::size_t i = 0; i < payload.values.size(); ++i) {
    const auto r = payload.row_idx[i];
    const auto c = payload.col_idx[i];
    if (r < 0 || r >= payload.rows || c < 0 || c >= payload.cols)
      throw TrainError("sparse payload: coordinate out of range");
    if (!seen.emplace(r, c).second)
      throw TrainError("sparse payload: duplicate coordinate (" + std::to_string(r) + ", " +
                       std::to_string(c) + ")");
    out(r, c) = payload.values[i];
  }
  return out;
}

SvdPayload svd_truncate(const Eigen::MatrixXd& m, int r) {
  const int full = static_cast<int>(std::min(m.rows(), m.cols()));
  if (r < 1 || r > full)
    throw ConfigError("svd rank " + std::to_string(r) + " outside [1, " + std::to_string(full) +
                      "]");
  SvdPayload out;
  if (full <= 16) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    out.u = svd.matrixU().leftCols(r);
    out.s = svd.singularValues().head(r);
    out.v = svd.matrixV().leftCols(r);
  } else {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) throw TrainError("svd did not converge");
    out.u = svd.matrixU().leftCols(r);
    out.s = svd.singularValues().head(r);
    out.v = svd.matrixV().leftCols(r);
  }
  return out;
}

Eigen::MatrixXd svd_reconstruct(const SvdPayload& payload) {
  return payload.u * payload.s.asDiagonal() * payload.v.transpose();
}

std::uint64_t payload_bytes(PayloadKind kind, const PayloadDims& dims, int value_width,
                            int index_width) {
  if (value_width < 1 || index_width < 1) throw ConfigError("payload widths must be positive");
  const auto w = static_cast<std::uint64_t>(value_width);
  const auto iw = static_cast<std::uint64_t>(index_width);
  auto require = [&](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("payload_bytes: missing or bad dims for ") + what);
  };
  switch (kind) {
    case PayloadKind::kDense:
      require(dims.d > 0 && dims.n > 0, "dense");
      return static_cast<std::uint64_t>(dims.d) * dims.n * w;
    case PayloadKind::kSparse:
      require(dims.k >= 0, "sparse");
      return static_cast<std::uint64_t>(dims.k) * (2 * iw + w);
    case PayloadKind::kSparseFlat:
      require(dims.k >= 0, "sparse");
      return static_cast<std::uint64_t>(dims.k) * (iw + w);
    case PayloadKind::kSvd:
      require(dims.d > 0 && dims.n > 0 && dims.r > 0, "svd");
      return static_cast<std::uint64_t>(dims.d * dims.r + dims.r + dims.n * dims.r) * w;
    case PayloadKind::kColr:
      require(dims.n > 0 && dims.r > 0, "colr");
      return static_cast<std::uint64_t>(dims.r) * dims.n * w + 8;
    case PayloadKind::kScolr:
      require(dims.n > 0 && dims.r > 0, "scolr");
      return static_cast<std::uint64_t>(dims.r) * dims.n * w + 8 +
             static_cast<std::uint64_t>(dims.r) * iw;
    case PayloadKind::kSeed:
      return 8;
  }
  throw ConfigError("payload_bytes: unknown kind");
}

}  // namespace fedlr
