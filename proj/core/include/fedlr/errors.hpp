#pragma once

#include <stdexcept>
#include <string>

namespace fedlr {

// Config-class problems (bad config file, bad flag values, unusable input
// paths). The CLI maps these to exit code 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed content inside an otherwise reachable input file. Carries the
// 1-based line number when it refers to a specific line.
struct ParseError : std::runtime_error {
  ParseError(const std::string& msg, long line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg),
        line_number(line) {}
  long line_number;
};

// Runtime failures during training (divergence, dimension mismatches caught
// late). Exit code 2.
struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CryptoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Fixed-point encode rejected a value; index names the offending slot.
struct FpOverflow : CryptoError {
  FpOverflow(const std::string& msg, long index) : CryptoError(msg), index(index) {}
  long index;
};

// Aggregation exceeded slot headroom (guard sentinel mismatch or addend count
// beyond the codec's capacity).
struct SlotOverflow : CryptoError {
  using CryptoError::CryptoError;
};

}  // namespace fedlr
