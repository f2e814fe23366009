#include <doctest.h>

#include <gmpxx.h>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fedlr/secureagg.hpp"

using namespace fedlr;

TEST_CASE("codec validation") {
  FixedPointCodec ok;
  CHECK_NOTHROW(ok.validate());
  CHECK(ok.limit() == (std::int64_t(1) << 23));  // 2^(32-8-1)
  CHECK(ok.scale() == 65536.0);

  FixedPointCodec wide{16, 63, 8};
  CHECK_THROWS_AS(wide.validate(), ConfigError);
  FixedPointCodec cramped{30, 32, 8};  // needs slot > scale + headroom
  CHECK_THROWS_AS(cramped.validate(), ConfigError);
  FixedPointCodec zero{0, 32, 8};
  CHECK_THROWS_AS(zero.validate(), ConfigError);
}

TEST_CASE("fixed-point encoding round-trips and rounds half to even") {
  const FixedPointCodec codec;
  const std::vector<double> vals{0.5, -1.25, 0.0, 100.0, -127.5, 1e-5};
  const auto ints = fp_encode(vals, codec);
  REQUIRE(ints.size() == vals.size());
  CHECK(ints[0] == 32768);        // 0.5 * 2^16
  CHECK(ints[1] == -81920);       // -1.25 * 2^16
  CHECK(ints[2] == 0);
  CHECK(ints[3] == 6553600);
  CHECK(ints[4] == -8355840);

  const auto back = fp_decode(ints, codec);
  for (std::size_t i = 0; i < vals.size(); ++i)
    CHECK(std::abs(back[i] - vals[i]) <= 0.5 / codec.scale());

  // ties to even: k + 0.5 integer targets round toward the even integer
  CHECK(fp_encode(std::vector<double>{1.5 / 65536.0}, codec)[0] == 2);
  CHECK(fp_encode(std::vector<double>{2.5 / 65536.0}, codec)[0] == 2);
  CHECK(fp_encode(std::vector<double>{-1.5 / 65536.0}, codec)[0] == -2);
  CHECK(fp_encode(std::vector<double>{-2.5 / 65536.0}, codec)[0] == -2);
}

TEST_CASE("fixed-point overflow names the offending index") {
  const FixedPointCodec codec;  // limit 2^23, so |x| >= 128.0 dies
  CHECK_NOTHROW((void)fp_encode(std::vector<double>{127.9999}, codec));
  try {
    (void)fp_encode(std::vector<double>{0.0, 128.0}, codec);
    FAIL("expected FpOverflow");
  } catch (const FpOverflow& e) {
    CHECK(e.index == 1);
  }
  try {
    (void)fp_encode(std::vector<double>{std::nan(""), 0.0}, codec);
    FAIL("expected FpOverflow");
  } catch (const FpOverflow& e) {
    CHECK(e.index == 0);
  }
}

TEST_CASE("textbook keypair on p=5, q=7") {
  // n = 35, lambda = lcm(4,6) = 12, mu = 12^-1 mod 35 = 3
  const PaillierPublic pub(mpz_class(35), 8);
  const PaillierPrivate prv(mpz_class(35), mpz_class(12), mpz_class(3));
  Rng rng(1);

  for (const long m : {0L, 1L, 9L, 34L}) {
    const mpz_class c = pub.encrypt(mpz_class(m), rng);
    CHECK(c >= 0);
    CHECK(c < pub.n_squared());
    CHECK(prv.decrypt(c) == m);
  }

  // homomorphic addition
  const mpz_class c3 = pub.encrypt(mpz_class(3), rng);
  const mpz_class c4 = pub.encrypt(mpz_class(4), rng);
  CHECK(prv.decrypt(pub.add(c3, c4)) == 7);

  // signed values via n-complement
  CHECK(prv.decrypt_signed(pub.encrypt_signed(-2, rng)) == -2);
  const mpz_class cneg = pub.encrypt_signed(-2, rng);
  const mpz_class cpos = pub.encrypt_signed(5, rng);
  CHECK(prv.decrypt_signed(pub.add(cneg, cpos)) == 3);

  CHECK_THROWS_AS((void)pub.encrypt(mpz_class(35), rng), CryptoError);
  CHECK_THROWS_AS((void)pub.encrypt(mpz_class(-1), rng), CryptoError);
}

TEST_CASE("generated keypairs round-trip and randomize ciphertexts") {
  const PaillierKeys keys = paillier_keygen(128, 42);
  Rng rng(7);
  for (const long m : {0L, 1L, 123456789L}) {
    const mpz_class c = keys.pub.encrypt(mpz_class(m), rng);
    CHECK(keys.prv.decrypt(c) == m);
    // the ciphertext itself must not be the plaintext in disguise
    CHECK(c != m);
  }
  // ciphertexts of the same message differ (probabilistic encryption)
  const mpz_class c1 = keys.pub.encrypt(mpz_class(5), rng);
  const mpz_class c2 = keys.pub.encrypt(mpz_class(5), rng);
  CHECK(c1 != c2);
  CHECK(keys.prv.decrypt(c1) == keys.prv.decrypt(c2));
}

TEST_CASE("keygen is deterministic with an exact modulus width") {
  for (const int bits : {64, 96, 128, 256}) {
    const PaillierKeys a = paillier_keygen(bits, 11);
    const PaillierKeys b = paillier_keygen(bits, 11);
    CHECK(a.pub.n() == b.pub.n());
    CHECK(mpz_sizeinbase(a.pub.n().get_mpz_t(), 2) == static_cast<std::size_t>(bits));
    CHECK(a.pub.key_bits() == bits);
    CHECK(a.pub.ciphertext_bytes() == static_cast<std::size_t>(bits) / 4);
    // p != q, else n would be a perfect square
    CHECK(mpz_perfect_square_p(a.pub.n().get_mpz_t()) == 0);
  }
  CHECK(paillier_keygen(128, 1).pub.n() != paillier_keygen(128, 2).pub.n());
  CHECK_THROWS_AS((void)paillier_keygen(32, 1), ConfigError);
  CHECK_THROWS_AS((void)paillier_keygen(129, 1), ConfigError);
}

TEST_CASE("a 61-addend ciphertext sum is integer-exact") {
  const PaillierKeys keys = paillier_keygen(256, 3);
  Rng rng(99);
  const std::int64_t bound = std::int64_t(1) << 23;
  std::int64_t plain_sum = 0;
  mpz_class acc;
  bool first = true;
  for (int i = 0; i < 61; ++i) {
    const std::int64_t v =
        static_cast<std::int64_t>(rng.next_below(2 * bound)) - bound;
    plain_sum += v;
    const mpz_class c = keys.pub.encrypt_signed(v, rng);
    acc = first ? c : keys.pub.add(acc, c);
    first = false;
  }
  CHECK(keys.prv.decrypt_signed(acc) == plain_sum);
}

TEST_CASE("per-element vectors add into exact sums") {
  const PaillierKeys keys = paillier_keygen(256, 5);
  const int n = 100, clients = 3;
  Rng rng(123);
  std::vector<std::vector<std::int64_t>> plain(clients, std::vector<std::int64_t>(n));
  for (auto& v : plain)
    for (auto& x : v) x = static_cast<std::int64_t>(rng.next_below(1 << 20)) - (1 << 19);

  ElementPayload acc = encrypt_elements(plain[0], keys.pub, rng);
  CHECK(acc.byte_size(keys.pub) == static_cast<std::uint64_t>(n) * 64);
  for (int c = 1; c < clients; ++c) {
    const ElementPayload next = encrypt_elements(plain[c], keys.pub, rng);
    add_elements(acc, next, keys.pub);
  }
  const auto sums = decrypt_elements(acc, keys.prv);
  REQUIRE(sums.size() == static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    CHECK(sums[i] == plain[0][i] + plain[1][i] + plain[2][i]);

  ElementPayload wrong = encrypt_elements(std::vector<std::int64_t>{1, 2}, keys.pub, rng);
  CHECK_THROWS_AS(add_elements(acc, wrong, keys.pub), CryptoError);
}

TEST_CASE("block counts") {
  CHECK(block_count_for(0, 8096) == 0);
  CHECK(block_count_for(1, 8096) == 1);
  CHECK(block_count_for(8096, 8096) == 1);
  CHECK(block_count_for(8097, 8096) == 2);
  CHECK(block_count_for(29648, 8096) == 4);   // 8 * 3706
  CHECK(block_count_for(59296, 8096) == 8);   // 16 * 3706
  CHECK_THROWS_AS((void)block_count_for(1, 0), ConfigError);

  Rng rng(17);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng.next_below(100000));
    CHECK(block_count_for(n, 8096) == (n + 8095) / 8096);
  }
}

TEST_CASE("packed mode round-trips through limb ciphertexts") {
  const PaillierKeys keys = paillier_keygen(256, 9);
  const FixedPointCodec codec;
  Rng rng(55);

  const int n = 10000;  // 2 blocks
  const int clients = 3;
  std::vector<std::vector<std::int64_t>> plain(clients, std::vector<std::int64_t>(n));
  for (auto& v : plain)
    for (auto& x : v)  // full open range (-limit, limit)
      x = static_cast<std::int64_t>(rng.next_below(2ull * codec.limit() - 1)) -
          (codec.limit() - 1);

  SecurePayload acc = pack_encrypt(plain[0], codec, 8096, keys.pub, rng);
  CHECK(acc.block_count() == 2);
  CHECK(acc.n_slots == n);
  // 256-bit key, 32-bit slots: 7 whole slots per limb
  CHECK(acc.slots_per_limb == 7);
  const std::uint64_t expected_bytes =
      (static_cast<std::uint64_t>((8096 + 6) / 7) * 2) * keys.pub.ciphertext_bytes();
  CHECK(acc.byte_size(keys.pub) == expected_bytes);

  for (int c = 1; c < clients; ++c) {
    const SecurePayload next = pack_encrypt(plain[c], codec, 8096, keys.pub, rng);
    add_packed(acc, next, keys.pub);
  }
  const auto sums = decrypt_unpack(acc, codec, keys.prv, clients);
  REQUIRE(sums.size() == static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    CHECK(sums[i] == plain[0][i] + plain[1][i] + plain[2][i]);
}

TEST_CASE("packed-mode guards trip on inconsistent addend counts") {
  const PaillierKeys keys = paillier_keygen(256, 13);
  const FixedPointCodec codec;
  Rng rng(4);
  const std::vector<std::int64_t> v{100, -200, 300};

  SecurePayload a = pack_encrypt(v, codec, 8096, keys.pub, rng);
  const SecurePayload b = pack_encrypt(v, codec, 8096, keys.pub, rng);
  add_packed(a, b, keys.pub);

  CHECK_NOTHROW((void)decrypt_unpack(a, codec, keys.prv, 2));
  CHECK_THROWS_AS((void)decrypt_unpack(a, codec, keys.prv, 1), SlotOverflow);
  CHECK_THROWS_AS((void)decrypt_unpack(a, codec, keys.prv, 3), SlotOverflow);
  // headroom cap: 2^8 addends claimed
  CHECK_THROWS_AS((void)decrypt_unpack(a, codec, keys.prv, 257), SlotOverflow);

  // geometry mismatch
  SecurePayload c = pack_encrypt(std::vector<std::int64_t>{1, 2}, codec, 8096, keys.pub, rng);
  CHECK_THROWS_AS(add_packed(c, a, keys.pub), CryptoError);
}

TEST_CASE("slot values at the headroom limit are rejected at encode time") {
  const PaillierKeys keys = paillier_keygen(256, 21);
  const FixedPointCodec codec;
  Rng rng(6);
  const std::vector<std::int64_t> hot{codec.limit()};
  CHECK_THROWS_AS((void)pack_encrypt(hot, codec, 8096, keys.pub, rng), FpOverflow);
  const std::vector<std::int64_t> cold{codec.limit() - 1};
  CHECK_NOTHROW((void)pack_encrypt(cold, codec, 8096, keys.pub, rng));
}

TEST_CASE("secure_aggregate equals the plain fixed-point path in both modes") {
  const PaillierKeys keys = paillier_keygen(256, 31);
  const FixedPointCodec codec;
  Rng rng(2023);
  const int n = 500, clients = 5;
  std::vector<std::vector<double>> vecs(clients, std::vector<double>(n));
  for (auto& v : vecs)
    for (auto& x : v) x = 4.0 * rng.next_double() - 2.0;

  // oracle: per-client fixed-point encode, integer sum, decode
  std::vector<std::int64_t> int_sums(n, 0);
  for (const auto& v : vecs) {
    const auto enc = fp_encode(v, codec);
    for (int i = 0; i < n; ++i) int_sums[i] += enc[i];
  }
  const auto expected = fp_decode(int_sums, codec);

  for (const SecureMode mode : {SecureMode::kPerElement, SecureMode::kPacked}) {
    SecureAggReport report;
    const auto got = secure_aggregate(vecs, mode, codec, 8096, keys, 77, 0, &report);
    REQUIRE(got.size() == static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) CHECK(got[i] == expected[i]);
    CHECK(report.plaintext_bytes == static_cast<std::uint64_t>(n) * 4);
    CHECK(report.ciphertext_bytes > 0);
    CHECK(report.client_encrypt_s >= 0.0);
  }

  // per-element ciphertexts are n * ct_bytes; packed is per-limb
  SecureAggReport per, packed;
  (void)secure_aggregate(vecs, SecureMode::kPerElement, codec, 8096, keys, 77, 0, &per);
  (void)secure_aggregate(vecs, SecureMode::kPacked, codec, 8096, keys, 77, 0, &packed);
  CHECK(per.ciphertext_bytes == static_cast<std::uint64_t>(n) * 64);
  // ciphertext size is block-granular: one full 8096-slot block of 7-slot
  // limbs, which at 500 slots exceeds per-element (packing pays off only past
  // lpb * spl elements per block)
  CHECK(packed.ciphertext_bytes == ((8096 + 6) / 7) * 64);

  CHECK_THROWS_AS(
      (void)secure_aggregate(vecs, SecureMode::kOff, codec, 8096, keys, 77, 0, nullptr),
      ConfigError);
}

template <typename P>
constexpr bool can_decrypt = requires(const P& p, const mpz_class& c) { p.decrypt(c); };
template <typename P>
constexpr bool can_encrypt = requires(const P& p, const mpz_class& m, Rng& r) {
  p.encrypt(m, r);
};

TEST_CASE("the aggregating side cannot decrypt by construction") {
  // the server holds PaillierPublic only; a decrypt member on it would defeat
  // the split, so its absence is pinned at compile time
  static_assert(!can_decrypt<PaillierPublic>);
  static_assert(can_decrypt<PaillierPrivate>);
  static_assert(can_encrypt<PaillierPublic>);
  CHECK(true);
}
