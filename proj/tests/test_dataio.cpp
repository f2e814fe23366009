#include <doctest.h>

#include <algorithm>
#include <array>
#include <cstdlib>
#include <set>
#include <string>
#include <vector>

#include "fedlr/dataio.hpp"
#include "fedlr/errors.hpp"
#include "support/synthetic.hpp"

using namespace fedlr;

TEST_CASE("double-colon parsing") {
  const std::string text =
      "1::31::2.5::1260759144\n"
      "\n"
      "2::1029::3.0::1260759179\n";
  const auto r = parse_ratings_text(text, RatingsFormat::kDoubleColon);
  REQUIRE(r.size() == 2);
  CHECK(r[0].user == 1);
  CHECK(r[0].item == 31);
  CHECK(r[0].rating == doctest::Approx(2.5));
  CHECK(r[0].timestamp == 1260759144);
  CHECK(r[1].user == 2);
  CHECK(r[1].item == 1029);
}

TEST_CASE("tab parsing with and without timestamps") {
  const auto four = parse_ratings_text("7\t9\t4.0\t123\n", RatingsFormat::kTab);
  REQUIRE(four.size() == 1);
  CHECK(four[0].timestamp == 123);

  // missing timestamp column falls back to the 1-based line number so file
  // order is preserved
  const auto three = parse_ratings_text("7\t9\t4.0\n8\t9\t1.0\n", RatingsFormat::kTab);
  REQUIRE(three.size() == 2);
  CHECK(three[0].timestamp == 1);
  CHECK(three[1].timestamp == 2);
}

TEST_CASE("malformed lines raise ParseError with the line number") {
  const auto line_of = [](const std::string& text, RatingsFormat f) -> long {
    try {
      (void)parse_ratings_text(text, f);
    } catch (const ParseError& e) {
      return e.line_number;
    }
    return -1;
  };
  CHECK(line_of("1::2::3::4\n1::2\n", RatingsFormat::kDoubleColon) == 2);
  CHECK(line_of("x::2::3::4\n", RatingsFormat::kDoubleColon) == 1);
  CHECK(line_of("1::2::notanumber::4\n", RatingsFormat::kDoubleColon) == 1);
  CHECK(line_of("1::2::3::4::5\n", RatingsFormat::kDoubleColon) == 1);
  CHECK(line_of("1\t2\t3\t4\t5\n", RatingsFormat::kTab) == 1);
  CHECK(line_of("1\t2\n", RatingsFormat::kTab) == 1);
  CHECK(line_of("1::2::3::4\n", RatingsFormat::kTab) == 1);  // wrong separator
}

TEST_CASE("parse errors from files carry the path") {
  CHECK_THROWS_AS((void)parse_ratings("/nonexistent/ratings.dat", RatingsFormat::kTab),
                  ConfigError);
}

static std::vector<RawRating> rating(std::initializer_list<std::array<std::int64_t, 3>> rows) {
  std::vector<RawRating> out;
  for (const auto& r : rows) out.push_back(RawRating{r[0], r[1], 1.0, r[2]});
  return out;
}

TEST_CASE("build_table filters, reindexes, and collapses duplicates") {
  // user 30 has three distinct items, user 10 has three (one duplicated),
  // user 20 only two -> dropped at min_interactions=3
  const auto ratings = rating({
      {30, 500, 3},
      {30, 100, 1},
      {30, 200, 2},
      {10, 7, 5},
      {10, 7, 9},  // duplicate, later timestamp wins
      {10, 100, 1},
      {10, 42, 2},
      {20, 100, 1},
      {20, 200, 2},
  });
  const auto table = build_table(ratings, 3);

  REQUIRE(table.num_users() == 2);
  CHECK(table.raw_user_id(0) == 10);  // ascending raw user id
  CHECK(table.raw_user_id(1) == 30);

  // item space is the union over surviving users: {7, 42, 100, 200, 500}
  REQUIRE(table.num_items() == 5);
  CHECK(table.raw_item_id(0) == 7);
  CHECK(table.raw_item_id(1) == 42);
  CHECK(table.raw_item_id(2) == 100);
  CHECK(table.raw_item_id(3) == 200);
  CHECK(table.raw_item_id(4) == 500);

  CHECK(table.num_interactions() == 6);

  // user 10's list sorted by timestamp: (100, ts1), (42, ts2), (7, ts9)
  const auto& u0 = table.interactions(0);
  REQUIRE(u0.size() == 3);
  CHECK(u0[0].item == 2);
  CHECK(u0[1].item == 1);
  CHECK(u0[2].item == 0);
  CHECK(u0[2].timestamp == 9);  // collapsed duplicate keeps the later stamp

  CHECK(table.has_interaction(0, 0));
  CHECK(!table.has_interaction(0, 4));
  CHECK(table.has_interaction(1, 4));
}

TEST_CASE("timestamp ties order by raw item id") {
  const auto ratings = rating({{1, 900, 5}, {1, 30, 5}, {1, 100, 5}});
  const auto table = build_table(ratings, 3);
  const auto& list = table.interactions(0);
  REQUIRE(list.size() == 3);
  CHECK(table.raw_item_id(list[0].item) == 30);
  CHECK(table.raw_item_id(list[1].item) == 100);
  CHECK(table.raw_item_id(list[2].item) == 900);
}

TEST_CASE("leave-one-out holds out the last interactions") {
  // 8 items per user so negatives exist; user 1 interacts with items 1..8
  // at timestamps 1..8, user 2 in reverse order
  std::vector<RawRating> ratings;
  for (int i = 1; i <= 8; ++i) ratings.push_back(RawRating{1, i, 1.0, i});
  for (int i = 1; i <= 8; ++i) ratings.push_back(RawRating{2, i + 4, 1.0, 9 - i});
  const auto table = build_table(ratings, 2);
  const auto split = leave_one_out(table, true, 3, 99);

  REQUIRE(split.test_item.size() == 2);
  // user 0: last-by-timestamp is raw item 8; second-to-last raw item 7
  CHECK(table.raw_item_id(split.test_item[0]) == 8);
  CHECK(table.raw_item_id(split.validation_item[0]) == 7);
  CHECK(split.train.interactions(0).size() == 6);
  // user 1 rated raw items 5..12 with descending stamps: latest is item 5
  CHECK(table.raw_item_id(split.test_item[1]) == 5);
  CHECK(table.raw_item_id(split.validation_item[1]) == 6);

  // negatives: right count, distinct, and disjoint from the user's full set
  for (int u = 0; u < 2; ++u) {
    REQUIRE(split.negatives[u].size() == 3);
    std::set<std::int32_t> uniq(split.negatives[u].begin(), split.negatives[u].end());
    CHECK(uniq.size() == 3);
    for (const auto neg : split.negatives[u]) CHECK(!table.has_interaction(u, neg));
  }

  // without validation the cut moves by one
  const auto split2 = leave_one_out(table, false, 3, 99);
  CHECK(split2.validation_item.empty());
  CHECK(split2.train.interactions(0).size() == 7);
  CHECK(table.raw_item_id(split2.test_item[0]) == 8);
}

TEST_CASE("leave-one-out is a pure function of table, flags, and seed") {
  using fedlr::testsupport::CorpusSpec;
  CorpusSpec spec;
  spec.users = 40;
  spec.items = 120;
  const auto table =
      build_table(parse_ratings_text(fedlr::testsupport::planted_corpus(spec), RatingsFormat::kTab),
                  10);
  const auto a = leave_one_out(table, true, 20, 7);
  const auto b = leave_one_out(table, true, 20, 7);
  CHECK(a.test_item == b.test_item);
  CHECK(a.validation_item == b.validation_item);
  CHECK(a.negatives == b.negatives);
  CHECK(serialize_split(a) == serialize_split(b));

  const auto c = leave_one_out(table, true, 20, 8);
  CHECK(a.test_item == c.test_item);  // holdout does not depend on the seed
  CHECK(a.negatives != c.negatives);  // negatives do
}

TEST_CASE("leave-one-out rejects users with too little history") {
  const auto table = build_table(rating({{1, 1, 1}, {1, 2, 2}}), 2);
  CHECK_THROWS_AS((void)leave_one_out(table, true, 1, 0), ConfigError);  // needs 3
  // and rejects negative requests that exceed the complement
  const auto t2 = build_table(rating({{1, 1, 1}, {1, 2, 2}, {1, 3, 3}}), 3);
  CHECK_THROWS_AS((void)leave_one_out(t2, false, 1, 0), ConfigError);  // complement empty
}

TEST_CASE("split serialization format") {
  std::vector<RawRating> ratings;
  for (int i = 1; i <= 4; ++i) ratings.push_back(RawRating{5, i * 10, 1.0, i});
  for (int i = 1; i <= 4; ++i) ratings.push_back(RawRating{9, 20 + i * 10, 1.0, 5 - i});
  const auto table = build_table(ratings, 2);
  const auto split = leave_one_out(table, true, 2, 3);

  // item union 10..60 -> dense 0..5; user 5 -> 0 keeps 10,20 in train;
  // user 9 -> 1 rated 30..60 in reverse, so train is 60,50 and test is 30
  CHECK(serialize_split(split) ==
        "0\t0\ttrain\n"
        "0\t1\ttrain\n"
        "0\t2\tvalidation\n"
        "0\t3\ttest\n"
        "1\t5\ttrain\n"
        "1\t4\ttrain\n"
        "1\t3\tvalidation\n"
        "1\t2\ttest\n");

  const auto negs = serialize_negatives(split);
  // two users, one line each: "<user>\t<n1>,<n2>\n"
  REQUIRE(negs.find('\n') != std::string::npos);
  CHECK(std::count(negs.begin(), negs.end(), '\n') == 2);
  CHECK(negs.substr(0, 2) == "0\t");
  CHECK(std::count(negs.begin(), negs.end(), ',') == 2);
}

TEST_CASE("train negative sampling avoids interacted items") {
  const auto table = build_table(
      rating({{1, 1, 1}, {1, 2, 2}, {1, 3, 3}, {2, 3, 1}, {2, 4, 2}, {2, 5, 3}}), 3);
  Rng rng = Rng::keyed(11, purpose::kTrainNeg, 0, 0);
  const auto negs = sample_train_negatives(table, 0, 4, rng);
  CHECK(negs.size() == 12);  // ratio * positives
  for (const auto n : negs) CHECK(!table.has_interaction(0, n));

  Rng rng2(1);
  CHECK_THROWS_AS((void)sample_train_negatives(table, 0, 0, rng2), ConfigError);
}

TEST_CASE("ml-1m corpus counts" * doctest::skip(std::getenv("FEDLR_ML1M_PATH") == nullptr)) {
  const char* path = std::getenv("FEDLR_ML1M_PATH");
  REQUIRE(path != nullptr);
  const auto ratings = parse_ratings(path, RatingsFormat::kDoubleColon);
  CHECK(ratings.size() == 1000209);
  const auto table = build_table(ratings, 20);
  CHECK(table.num_users() == 6040);
  CHECK(table.num_items() == 3706);
}
