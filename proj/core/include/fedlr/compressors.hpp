#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "fedlr/errors.hpp"

namespace fedlr {

// Baseline update codecs plus the byte-accounting used by the traffic ledger.

struct SparsePayload {
  int rows = 0;
  int cols = 0;
  std::vector<std::int32_t> row_idx;  // parallel arrays, sorted by (row, col)
  std::vector<std::int32_t> col_idx;
  std::vector<double> values;
  std::size_t size() const { return values.size(); }
};

// Keeps the ceil(fraction * rows * cols) largest-magnitude entries. Magnitude
// ties resolve to the lexicographically smaller (row, col), so the kept set is
// a deterministic function of the matrix alone.
SparsePayload topk_compress(const Eigen::MatrixXd& m, double fraction);

// Dense matrix with the stored entries placed and everything else zero.
// Duplicate coordinates are an error.
Eigen::MatrixXd topk_decompress(const SparsePayload& payload);

struct SvdPayload {
  Eigen::MatrixXd u;   // d x r
  Eigen::VectorXd s;   // r, non-increasing
  Eigen::MatrixXd v;   // n x r
  int rank() const { return static_cast<int>(s.size()); }
};

// Best rank-r approximation factors (truncated SVD).
SvdPayload svd_truncate(const Eigen::MatrixXd& m, int r);
Eigen::MatrixXd svd_reconstruct(const SvdPayload& payload);

// ===== payload accounting =====

enum class PayloadKind {
  kDense,       // d*n values
  kSparse,      // k entries, split row+col indexing: k * (2*index + value)
  kSparseFlat,  // k entries, one flat index:          k * (index + value)
  kSvd,         // (d*r + r + n*r) values
  kColr,        // r*n values + 8-byte projection seed
  kScolr,       // colr + r index bytes for the row selection
  kSeed,        // 8
};

struct PayloadDims {
  std::int64_t d = 0;
  std::int64_t n = 0;
  std::int64_t r = 0;  // rank (svd/colr) or local rank (scolr)
  std::int64_t k = 0;  // kept entries (sparse kinds)
};

// Accounting only: widths describe the wire format (4-byte values and indices
// by default), independent of in-memory representation.
std::uint64_t payload_bytes(PayloadKind kind, const PayloadDims& dims, int value_width = 4,
                            int index_width = 4);

}  // namespace fedlr
