#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedlr/errors.hpp"
#include "fedlr/rng.hpp"

namespace fedlr {

// ===== raw ratings =====

struct RawRating {
  std::int64_t user = 0;
  std::int64_t item = 0;
  double rating = 0.0;
  std::int64_t timestamp = 0;
};

enum class RatingsFormat {
  kDoubleColon,  // user::item::rating::timestamp
  kTab,          // user\titem\trating[\ttimestamp]
};

// Parses a whole ratings file. Blank lines are skipped; any other malformed
// line raises ParseError with its 1-based line number. Tab lines may omit the
// timestamp column, in which case the line index stands in for it and ordering
// degrades to file order.
std::vector<RawRating> parse_ratings(const std::string& path, RatingsFormat format);
std::vector<RawRating> parse_ratings_text(const std::string& text, RatingsFormat format);

// ===== dense-indexed interaction table =====

struct Interaction {
  std::int32_t item = 0;  // dense item index
  std::int64_t timestamp = 0;
};

// Users and items re-indexed densely from 0 (ascending raw id order on both
// sides), users with fewer than min_interactions distinct items dropped,
// per-user lists sorted by (timestamp, raw item id) ascending. Duplicate
// (user, item) pairs collapse to one interaction carrying the latest timestamp.
class InteractionTable {
 public:
  int num_users() const { return static_cast<int>(by_user_.size()); }
  int num_items() const { return static_cast<int>(item_ids_.size()); }
  std::int64_t num_interactions() const { return total_; }

  const std::vector<Interaction>& interactions(int user) const { return by_user_.at(user); }
  bool has_interaction(int user, int item) const;

  std::int64_t raw_user_id(int user) const { return user_ids_.at(user); }
  std::int64_t raw_item_id(int item) const { return item_ids_.at(item); }

  // Assembles a table from already-indexed parts; sorts lists and rebuilds
  // membership. Used by build_table and by the split (which reuses the full
  // table's index maps on shortened lists).
  static InteractionTable from_parts(std::vector<std::int64_t> user_ids,
                                     std::vector<std::int64_t> item_ids,
                                     std::vector<std::vector<Interaction>> by_user);

 private:
  std::vector<std::vector<Interaction>> by_user_;
  std::vector<std::vector<std::int32_t>> membership_;  // sorted item indices per user
  std::vector<std::int64_t> user_ids_;
  std::vector<std::int64_t> item_ids_;
  std::int64_t total_ = 0;
};

InteractionTable build_table(const std::vector<RawRating>& ratings, int min_interactions = 20);

// ===== leave-one-out split =====

struct EvalSplit {
  InteractionTable train;  // same index space as the source table
  std::vector<std::int32_t> test_item;              // one per user
  std::vector<std::int32_t> validation_item;        // empty unless requested
  std::vector<std::vector<std::int32_t>> negatives; // num_users x neg_count, fixed at split time
};

// Holds out each user's last interaction as test (and second-to-last as
// validation when requested), then draws neg_count distinct eval negatives per
// user from items outside the user's full interaction set. Negative streams
// are keyed by (seed, user), so the split is a pure function of
// (table, flags, seed).
EvalSplit leave_one_out(const InteractionTable& table, bool with_validation,
                        int neg_count, std::uint64_t seed);

// ratio negatives per positive, uniform with replacement over the items the
// user never interacted with in `table`. ratio >= 1.
std::vector<std::int32_t> sample_train_negatives(const InteractionTable& table, int user,
                                                 int ratio, Rng& rng);

// Split serialization: one `user<TAB>item<TAB>tag` line per interaction
// (tag = train | validation | test), users ascending, train lines in
// interaction order. Indices are dense.
std::string serialize_split(const EvalSplit& split);
// `user<TAB>i1,i2,...` per user, negatives in draw order.
std::string serialize_negatives(const EvalSplit& split);

}  // namespace fedlr
