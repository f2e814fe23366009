#include "fedlr/secureagg.hpp"

#include <chrono>
#include <cmath>

namespace fedlr {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// bits random bits assembled from the stream, most significant word first.
mpz_class random_bits(Rng& rng, int bits) {
  mpz_class out = 0;
  for (int filled = 0; filled < bits; filled += 64) {
    out <<= 64;
    out += mpz_class(static_cast<unsigned long>(rng.next_u64()));
  }
  // trim to exactly `bits`
  mpz_class mask = (mpz_class(1) << bits) - 1;
  return out & mask;
}

}  // namespace

// ===== codec =====

void FixedPointCodec::validate() const {
  if (scale_bits < 1 || slot_bits < 2 || headroom_bits < 1)
    throw ConfigError("fixed-point codec: bits fields must be positive");
  if (slot_bits > 62) throw ConfigError("fixed-point codec: slot_bits must be <= 62");
  if (slot_bits <= scale_bits + headroom_bits)
    throw ConfigError("fixed-point codec: need slot_bits > scale_bits + headroom_bits");
}

std::vector<std::int64_t> fp_encode(std::span<const double> values, const FixedPointCodec& codec) {
  codec.validate();
  const double scale = codec.scale();
  const std::int64_t limit = codec.limit();
  std::vector<std::int64_t> out;
  out.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x = values[i];
    if (!std::isfinite(x))
      throw FpOverflow("fp_encode: non-finite value at index " + std::to_string(i),
                       static_cast<long>(i));
    // nearbyint under the default rounding mode = ties to even
    const double scaled = std::nearbyint(x * scale);
    if (!(std::abs(scaled) < static_cast<double>(limit)))
      throw FpOverflow("fp_encode: value " + std::to_string(x) + " at index " +
                           std::to_string(i) + " exceeds headroom limit",
                       static_cast<long>(i));
    out.push_back(static_cast<std::int64_t>(scaled));
  }
  return out;
}

std::vector<double> fp_decode(std::span<const std::int64_t> ints, const FixedPointCodec& codec) {
  codec.validate();
  const double inv = 1.0 / codec.scale();
  std::vector<double> out;
  out.reserve(ints.size());
  for (const auto v : ints) out.push_back(static_cast<double>(v) * inv);
  return out;
}

// ===== Paillier =====

PaillierPublic::PaillierPublic(mpz_class n, int key_bits)
    : n_(std::move(n)), n2_(n_ * n_), key_bits_(key_bits) {}

mpz_class PaillierPublic::encrypt(const mpz_class& m, Rng& rng) const {
  if (m < 0 || m >= n_) throw CryptoError("paillier encrypt: message outside [0, n)");
  mpz_class r;
  for (;;) {
    r = random_bits(rng, key_bits_) % n_;
    if (r == 0) continue;
    mpz_class g;
    mpz_gcd(g.get_mpz_t(), r.get_mpz_t(), n_.get_mpz_t());
    if (g == 1) break;
  }
  // g = n + 1, so g^m = 1 + m*n (mod n^2)
  mpz_class c1 = (1 + m * n_) % n2_;
  mpz_class c2;
  mpz_powm(c2.get_mpz_t(), r.get_mpz_t(), n_.get_mpz_t(), n2_.get_mpz_t());
  return (c1 * c2) % n2_;
}

mpz_class PaillierPublic::encrypt_signed(std::int64_t v, Rng& rng) const {
  mpz_class m = v >= 0 ? mpz_class(static_cast<long>(v)) : n_ + mpz_class(static_cast<long>(v));
  return encrypt(m, rng);
}

mpz_class PaillierPublic::add(const mpz_class& c1, const mpz_class& c2) const {
  return (c1 * c2) % n2_;
}

PaillierPrivate::PaillierPrivate(mpz_class n, mpz_class lambda, mpz_class mu)
    : n_(std::move(n)), n2_(n_ * n_), lambda_(std::move(lambda)), mu_(std::move(mu)) {}

mpz_class PaillierPrivate::decrypt(const mpz_class& c) const {
  if (c < 0 || c >= n2_) throw CryptoError("paillier decrypt: ciphertext outside [0, n^2)");
  mpz_class u;
  mpz_powm(u.get_mpz_t(), c.get_mpz_t(), lambda_.get_mpz_t(), n2_.get_mpz_t());
  mpz_class l = (u - 1) / n_;
  return (l * mu_) % n_;
}

std::int64_t PaillierPrivate::decrypt_signed(const mpz_class& c) const {
  mpz_class m = decrypt(c);
  if (m * 2 > n_) m -= n_;
  if (!m.fits_slong_p())
    throw CryptoError("paillier decrypt_signed: plaintext does not fit a 64-bit integer");
  return static_cast<std::int64_t>(m.get_si());
}

PaillierKeys paillier_keygen(int bits, std::uint64_t seed) {
  if (bits < 64 || bits % 2 != 0) throw ConfigError("paillier key bits must be even and >= 64");
  Rng rng = Rng::keyed(seed, purpose::kKeygen);
  const int half = bits / 2;

  auto gen_prime = [&](const mpz_class* avoid) {
    for (;;) {
      mpz_class c = random_bits(rng, half);
      mpz_setbit(c.get_mpz_t(), half - 1);  // exact bit length
      mpz_setbit(c.get_mpz_t(), half - 2);  // keeps n at full width
      mpz_setbit(c.get_mpz_t(), 0);
      mpz_class p;
      mpz_nextprime(p.get_mpz_t(), c.get_mpz_t());
      if (mpz_sizeinbase(p.get_mpz_t(), 2) != static_cast<std::size_t>(half)) continue;
      if (avoid && p == *avoid) continue;
      return p;
    }
  };

  for (;;) {
    const mpz_class p = gen_prime(nullptr);
    const mpz_class q = gen_prime(&p);
    mpz_class n = p * q;
    if (mpz_sizeinbase(n.get_mpz_t(), 2) != static_cast<std::size_t>(bits)) continue;
    mpz_class lambda;
    mpz_class pm1 = p - 1, qm1 = q - 1;
    mpz_lcm(lambda.get_mpz_t(), pm1.get_mpz_t(), qm1.get_mpz_t());
    mpz_class mu;
    if (mpz_invert(mu.get_mpz_t(), lambda.get_mpz_t(), n.get_mpz_t()) == 0) continue;
    PaillierKeys keys;
    keys.pub = PaillierPublic(n, bits);
    keys.prv = PaillierPrivate(n, lambda, mu);
    return keys;
  }
}

// ===== per-element mode =====

ElementPayload encrypt_elements(std::span<const std::int64_t> ints, const PaillierPublic& pub,
                                Rng& rng) {
  ElementPayload out;
  out.cts.reserve(ints.size());
  for (const auto v : ints) out.cts.push_back(pub.encrypt_signed(v, rng));
  return out;
}

void add_elements(ElementPayload& acc, const ElementPayload& other, const PaillierPublic& pub) {
  if (acc.cts.size() != other.cts.size())
    throw CryptoError("add_elements: payload length mismatch");
  for (std::size_t i = 0; i < acc.cts.size(); ++i) acc.cts[i] = pub.add(acc.cts[i], other.cts[i]);
}

std::vector<std::int64_t> decrypt_elements(const ElementPayload& payload,
                                           const PaillierPrivate& prv) {
  std::vector<std::int64_t> out;
  out.reserve(payload.cts.size());
  for (const auto& c : payload.cts) out.push_back(prv.decrypt_signed(c));
  return out;
}

// ===== packed mode =====

int block_count_for(std::int64_t n_slots, int slots_per_block) {
  if (n_slots < 0 || slots_per_block < 1)
    throw ConfigError("block_count_for: bad slot geometry");
  return static_cast<int>((n_slots + slots_per_block - 1) / slots_per_block);
}

namespace {

int limbs_per_block(int slots_per_block, int slots_per_limb) {
  return (slots_per_block + slots_per_limb - 1) / slots_per_limb;
}

}  // namespace

std::uint64_t SecurePayload::byte_size(const PaillierPublic& pub) const {
  if (blocks.empty()) return 0;
  const int lpb = limbs_per_block(slots_per_block, slots_per_limb);
  return static_cast<std::uint64_t>(blocks.size()) * lpb * pub.ciphertext_bytes();
}

SecurePayload pack_encrypt(std::span<const std::int64_t> ints, const FixedPointCodec& codec,
                           int slots_per_block, const PaillierPublic& pub, Rng& rng) {
  codec.validate();
  if (slots_per_block < 1) throw ConfigError("slots_per_block must be >= 1");
  const int spl = (pub.key_bits() - 1) / codec.slot_bits;
  if (spl < 1)
    throw CryptoError("pack_encrypt: key too small to hold one slot per limb");

  const std::int64_t offset = codec.limit();  // slot stores v + offset, strictly positive range
  SecurePayload out;
  out.n_slots = static_cast<std::int64_t>(ints.size());
  out.slots_per_block = slots_per_block;
  out.slots_per_limb = spl;
  out.slot_bits = codec.slot_bits;
  const int n_blocks = block_count_for(out.n_slots, slots_per_block);
  const int lpb = limbs_per_block(slots_per_block, spl);
  out.blocks.resize(n_blocks);

  for (int b = 0; b < n_blocks; ++b) {
    auto& limbs = out.blocks[b];
    limbs.reserve(lpb);
    for (int l = 0; l < lpb; ++l) {
      mpz_class plain = 0;
      const std::int64_t base = static_cast<std::int64_t>(b) * slots_per_block +
                                static_cast<std::int64_t>(l) * spl;
      const int here = static_cast<int>(
          std::min<std::int64_t>(spl, std::min<std::int64_t>(slots_per_block - l * spl,
                                                             std::max<std::int64_t>(0, out.n_slots - base))));
      // high slot first so one shift-and-add pass builds the limb
      for (int k = here - 1; k >= 0; --k) {
        const std::int64_t v = ints[static_cast<std::size_t>(base + k)];
        if (v <= -offset || v >= offset)
          throw FpOverflow("pack_encrypt: slot value exceeds headroom limit",
                           static_cast<long>(base + k));
        plain <<= codec.slot_bits;
        plain += static_cast<long>(v + offset);
      }
      // padding slots above `here` stay zero
      limbs.push_back(pub.encrypt(plain, rng));
    }
  }
  // Guard sentinel: every client encrypts the maximum legal slot value. After
  // aggregation it must decrypt to exactly n_addends * (2*offset - 1); a
  // cohort beyond the headroom budget or a corrupted sum breaks the equality.
  out.guard = pub.encrypt(mpz_class(static_cast<long>(2 * offset - 1)), rng);
  return out;
}

void add_packed(SecurePayload& acc, const SecurePayload& other, const PaillierPublic& pub) {
  if (acc.n_slots != other.n_slots || acc.slots_per_block != other.slots_per_block ||
      acc.slots_per_limb != other.slots_per_limb || acc.slot_bits != other.slot_bits)
    throw CryptoError("add_packed: payload geometry mismatch");
  for (std::size_t b = 0; b < acc.blocks.size(); ++b)
    for (std::size_t l = 0; l < acc.blocks[b].size(); ++l)
      acc.blocks[b][l] = pub.add(acc.blocks[b][l], other.blocks[b][l]);
  acc.guard = pub.add(acc.guard, other.guard);
}

std::vector<std::int64_t> decrypt_unpack(const SecurePayload& payload,
                                         const FixedPointCodec& codec,
                                         const PaillierPrivate& prv, int n_addends) {
  codec.validate();
  if (n_addends < 1) throw ConfigError("decrypt_unpack: n_addends must be >= 1");
  if (n_addends > (1 << codec.headroom_bits))
    throw SlotOverflow("decrypt_unpack: " + std::to_string(n_addends) +
                       " addends exceed 2^" + std::to_string(codec.headroom_bits) +
                       " headroom budget");
  const std::int64_t offset = codec.limit();

  const mpz_class guard = prv.decrypt(payload.guard);
  const mpz_class guard_expected =
      mpz_class(static_cast<long>(n_addends)) * mpz_class(static_cast<long>(2 * offset - 1));
  if (guard != guard_expected)
    throw SlotOverflow("decrypt_unpack: guard sentinel mismatch (headroom violation or wrong addend count)");

  const mpz_class slot_mask = (mpz_class(1) << codec.slot_bits) - 1;
  const std::int64_t max_slot_sum =
      static_cast<std::int64_t>(n_addends) * (2 * offset);  // exclusive bound

  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(payload.n_slots));
  const int spl = payload.slots_per_limb;
  for (std::size_t b = 0; b < payload.blocks.size(); ++b) {
    for (std::size_t l = 0; l < payload.blocks[b].size(); ++l) {
      const std::int64_t base = static_cast<std::int64_t>(b) * payload.slots_per_block +
                                static_cast<std::int64_t>(l) * spl;
      if (base >= payload.n_slots) break;
      mpz_class limb = prv.decrypt(payload.blocks[b][l]);
      const int here = static_cast<int>(std::min<std::int64_t>(
          spl, std::min<std::int64_t>(payload.slots_per_block - static_cast<std::int64_t>(l) * spl,
                                      payload.n_slots - base)));
      for (int k = 0; k < here; ++k) {
        const mpz_class slot = limb & slot_mask;
        limb >>= payload.slot_bits;
        const std::int64_t slot_sum = static_cast<std::int64_t>(slot.get_ui());
        if (slot_sum >= max_slot_sum)
          throw SlotOverflow("decrypt_unpack: slot sum exceeds reachable range at slot " +
                             std::to_string(base + k));
        out.push_back(slot_sum - static_cast<std::int64_t>(n_addends) * offset);
      }
      if (limb != 0)
        throw SlotOverflow("decrypt_unpack: residual bits above the top slot of a limb");
    }
  }
  return out;
}

// ===== end-to-end helper =====

std::vector<double> secure_aggregate(const std::vector<std::vector<double>>& weighted_vectors,
                                     SecureMode mode, const FixedPointCodec& codec,
                                     int slots_per_block, const PaillierKeys& keys,
                                     std::uint64_t noise_seed, std::uint64_t round,
                                     SecureAggReport* report) {
  if (mode == SecureMode::kOff) throw ConfigError("secure_aggregate called with mode off");
  if (weighted_vectors.empty()) throw ConfigError("secure_aggregate: empty cohort");
  const std::size_t n = weighted_vectors.front().size();
  for (const auto& v : weighted_vectors)
    if (v.size() != n) throw ConfigError("secure_aggregate: ragged client vectors");
  const int cohort = static_cast<int>(weighted_vectors.size());

  double encrypt_s = 0.0, add_s = 0.0;
  std::vector<std::int64_t> sums;
  std::uint64_t ct_bytes = 0;

  if (mode == SecureMode::kPerElement) {
    std::vector<ElementPayload> payloads(cohort);
    for (int c = 0; c < cohort; ++c) {
      Rng rng = Rng::keyed(noise_seed, purpose::kEncNoise, round, static_cast<std::uint64_t>(c));
      const auto t0 = Clock::now();
      const auto ints = fp_encode(weighted_vectors[c], codec);
      payloads[c] = encrypt_elements(ints, keys.pub, rng);
      encrypt_s += seconds_since(t0);
    }
    ct_bytes = payloads.front().byte_size(keys.pub);
    const auto t0 = Clock::now();
    ElementPayload acc = std::move(payloads.front());
    for (int c = 1; c < cohort; ++c) add_elements(acc, payloads[c], keys.pub);
    add_s = seconds_since(t0);
    sums = decrypt_elements(acc, keys.prv);
  } else {
    std::vector<SecurePayload> payloads(cohort);
    for (int c = 0; c < cohort; ++c) {
      Rng rng = Rng::keyed(noise_seed, purpose::kEncNoise, round, static_cast<std::uint64_t>(c));
      const auto t0 = Clock::now();
      const auto ints = fp_encode(weighted_vectors[c], codec);
      payloads[c] = pack_encrypt(ints, codec, slots_per_block, keys.pub, rng);
      encrypt_s += seconds_since(t0);
    }
    ct_bytes = payloads.front().byte_size(keys.pub);
    const auto t0 = Clock::now();
    SecurePayload acc = std::move(payloads.front());
    for (int c = 1; c < cohort; ++c) add_packed(acc, payloads[c], keys.pub);
    add_s = seconds_since(t0);
    sums = decrypt_unpack(acc, codec, keys.prv, cohort);
  }

  if (report) {
    report->client_encrypt_s = encrypt_s / cohort;
    report->server_add_s = add_s;
    report->ciphertext_bytes = ct_bytes;
    report->plaintext_bytes = static_cast<std::uint64_t>(n) * 4;
  }
  return fp_decode(sums, codec);
}

}  // namespace fedlr
