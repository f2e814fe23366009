#include "fedlr/dataio.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace fedlr {

namespace {

// Splits on an exact delimiter; keeps empty fields so bad lines fail loudly.
std::vector<std::string> split_exact(const std::string& line, const std::string& delim) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t hit = line.find(delim, pos);
    if (hit == std::string::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, hit - pos));
    pos = hit + delim.size();
  }
}

std::int64_t parse_int_field(const std::string& s, const char* what, long line) {
  if (s.empty()) throw ParseError(std::string("empty ") + what + " field", line);
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (errno != 0 || end != s.c_str() + s.size())
    throw ParseError(std::string("bad ") + what + " field '" + s + "'", line);
  return v;
}

double parse_double_field(const std::string& s, const char* what, long line) {
  if (s.empty()) throw ParseError(std::string("empty ") + what + " field", line);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (errno != 0 || end != s.c_str() + s.size())
    throw ParseError(std::string("bad ") + what + " field '" + s + "'", line);
  return v;
}

}  // namespace

std::vector<RawRating> parse_ratings_text(const std::string& text, RatingsFormat format) {
  std::vector<RawRating> out;
  std::istringstream in(text);
  std::string line;
  long line_no = 0;
  const std::string delim = format == RatingsFormat::kDoubleColon ? "::" : "\t";
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_exact(line, delim);
    RawRating r;
    if (fields.size() == 4) {
      r.timestamp = parse_int_field(fields[3], "timestamp", line_no);
    } else if (fields.size() == 3 && format == RatingsFormat::kTab) {
      // No timestamp column: fall back to file order.
      r.timestamp = line_no;
    } else {
      throw ParseError("expected 4 fields, got " + std::to_string(fields.size()), line_no);
    }
    r.user = parse_int_field(fields[0], "user", line_no);
    r.item = parse_int_field(fields[1], "item", line_no);
    r.rating = parse_double_field(fields[2], "rating", line_no);
    out.push_back(r);
  }
  return out;
}

std::vector<RawRating> parse_ratings(const std::string& path, RatingsFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open ratings file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_ratings_text(buf.str(), format);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

// ===== InteractionTable =====

bool InteractionTable::has_interaction(int user, int item) const {
  const auto& m = membership_.at(user);
  return std::binary_search(m.begin(), m.end(), static_cast<std::int32_t>(item));
}

InteractionTable InteractionTable::from_parts(std::vector<std::int64_t> user_ids,
                                              std::vector<std::int64_t> item_ids,
                                              std::vector<std::vector<Interaction>> by_user) {
  InteractionTable t;
  t.user_ids_ = std::move(user_ids);
  t.item_ids_ = std::move(item_ids);
  t.by_user_ = std::move(by_user);
  t.membership_.resize(t.by_user_.size());
  for (std::size_t u = 0; u < t.by_user_.size(); ++u) {
    auto& list = t.by_user_[u];
    std::sort(list.begin(), list.end(), [&](const Interaction& a, const Interaction& b) {
      if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
      return t.item_ids_[a.item] < t.item_ids_[b.item];
    });
    auto& m = t.membership_[u];
    m.reserve(list.size());
    for (const auto& it : list) m.push_back(it.item);
    std::sort(m.begin(), m.end());
    t.total_ += static_cast<std::int64_t>(list.size());
  }
  return t;
}

InteractionTable build_table(const std::vector<RawRating>& ratings, int min_interactions) {
  if (min_interactions < 1) throw ConfigError("min_interactions must be >= 1");

  // Collapse duplicates to the latest timestamp, then filter users.
  std::map<std::int64_t, std::map<std::int64_t, std::int64_t>> per_user;  // user -> item -> ts
  for (const auto& r : ratings) {
    auto& slot = per_user[r.user];
    auto it = slot.find(r.item);
    if (it == slot.end() || it->second < r.timestamp) slot[r.item] = r.timestamp;
  }

  std::vector<std::int64_t> user_ids;
  for (const auto& [uid, items] : per_user)
    if (static_cast<int>(items.size()) >= min_interactions) user_ids.push_back(uid);

  // Item index space = union over surviving users, raw ids ascending.
  std::map<std::int64_t, std::int32_t> item_index;
  for (const auto uid : user_ids)
    for (const auto& [iid, ts] : per_user[uid]) item_index.emplace(iid, 0);
  std::vector<std::int64_t> item_ids;
  item_ids.reserve(item_index.size());
  for (auto& [iid, idx] : item_index) {
    idx = static_cast<std::int32_t>(item_ids.size());
    item_ids.push_back(iid);
  }

  std::vector<std::vector<Interaction>> by_user(user_ids.size());
  for (std::size_t u = 0; u < user_ids.size(); ++u) {
    for (const auto& [iid, ts] : per_user[user_ids[u]])
      by_user[u].push_back(Interaction{item_index[iid], ts});
  }
  return InteractionTable::from_parts(std::move(user_ids), std::move(item_ids), std::move(by_user));
}

// ===== leave-one-out =====

namespace {

// neg_count distinct non-interacted items for one user. Rejection sampling
// when the complement is comfortably larger than the request; otherwise an
// explicit complement walk with a partial shuffle. Both paths read only the
// caller's stream, so the choice of path is itself deterministic.
std::vector<std::int32_t> draw_eval_negatives(const InteractionTable& table, int user,
                                              int neg_count, Rng& rng) {
  const int n_items = table.num_items();
  const int owned = static_cast<int>(table.interactions(user).size());
  const int available = n_items - owned;
  if (available < neg_count)
    throw ConfigError("user " + std::to_string(table.raw_user_id(user)) + " has only " +
                      std::to_string(available) + " non-interacted items; need " +
                      std::to_string(neg_count));

  std::vector<std::int32_t> out;
  out.reserve(neg_count);
  if (available >= 2 * neg_count) {
    std::unordered_set<std::int32_t> seen;
    while (static_cast<int>(out.size()) < neg_count) {
      const auto cand = static_cast<std::int32_t>(rng.next_below(n_items));
      if (table.has_interaction(user, cand) || !seen.insert(cand).second) continue;
      out.push_back(cand);
    }
  } else {
    std::vector<std::int32_t> complement;
    complement.reserve(available);
    for (std::int32_t i = 0; i < n_items; ++i)
      if (!table.has_interaction(user, i)) complement.push_back(i);
    rng.shuffle(complement);
    out.assign(complement.begin(), complement.begin() + neg_count);
  }
  return out;
}

}  // namespace

EvalSplit leave_one_out(const InteractionTable& table, bool with_validation,
                        int neg_count, std::uint64_t seed) {
  if (neg_count < 1) throw ConfigError("neg_count must be >= 1");
  const int needed = with_validation ? 3 : 2;
  const int m = table.num_users();

  EvalSplit split;
  split.test_item.resize(m);
  if (with_validation) split.validation_item.resize(m);
  split.negatives.resize(m);

  std::vector<std::vector<Interaction>> train_lists(m);
  std::vector<std::int64_t> user_ids(m), item_ids(table.num_items());
  for (int u = 0; u < m; ++u) user_ids[u] = table.raw_user_id(u);
  for (int i = 0; i < table.num_items(); ++i) item_ids[i] = table.raw_item_id(i);

  for (int u = 0; u < m; ++u) {
    const auto& list = table.interactions(u);
    if (static_cast<int>(list.size()) < needed)
      throw ConfigError("user " + std::to_string(table.raw_user_id(u)) + " has " +
                        std::to_string(list.size()) + " interactions; leave-one-out needs >= " +
                        std::to_string(needed));
    std::size_t cut = list.size() - 1;
    split.test_item[u] = list[cut].item;
    if (with_validation) {
      --cut;
      split.validation_item[u] = list[cut].item;
    }
    train_lists[u].assign(list.begin(), list.begin() + cut);

    Rng stream = Rng::keyed(seed, purpose::kEvalNeg, 0, static_cast<std::uint64_t>(u));
    split.negatives[u] = draw_eval_negatives(table, u, neg_count, stream);
  }

  split.train = InteractionTable::from_parts(std::move(user_ids), std::move(item_ids),
                                             std::move(train_lists));
  return split;
}

std::vector<std::int32_t> sample_train_negatives(const InteractionTable& table, int user,
                                                 int ratio, Rng& rng) {
  if (ratio < 1) throw ConfigError("negative ratio must be >= 1");
  const int n_items = table.num_items();
  const int owned = static_cast<int>(table.interactions(user).size());
  if (owned >= n_items)
    throw ConfigError("user " + std::to_string(table.raw_user_id(user)) +
                      " interacted with every item; no negatives available");
  const std::size_t want = static_cast<std::size_t>(ratio) * table.interactions(user).size();
  std::vector<std::int32_t> out;
  out.reserve(want);
  while (out.size() < want) {
    const auto cand = static_cast<std::int32_t>(rng.next_below(n_items));
    if (!table.has_interaction(user, cand)) out.push_back(cand);
  }
  return out;
}

// ===== serialization =====

std::string serialize_split(const EvalSplit& split) {
  std::ostringstream out;
  const int m = split.train.num_users();
  for (int u = 0; u < m; ++u) {
    for (const auto& it : split.train.interactions(u))
      out << u << '\t' << it.item << "\ttrain\n";
    if (!split.validation_item.empty())
      out << u << '\t' << split.validation_item[u] << "\tvalidation\n";
    out << u << '\t' << split.test_item[u] << "\ttest\n";
  }
  return out.str();
}

std::string serialize_negatives(const EvalSplit& split) {
  std::ostringstream out;
  for (std::size_t u = 0; u < split.negatives.size(); ++u) {
    out << u << '\t';
    const auto& negs = split.negatives[u];
    for (std::size_t i = 0; i < negs.size(); ++i) {
      if (i) out << ',';
      out << negs[i];
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace fedlr
