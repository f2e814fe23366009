#pragma once

#include <cstdint>
#include <gmpxx.h>
#include <memory>
#include <span>
#include <vector>

#include "fedlr/errors.hpp"
#include "fedlr/rng.hpp"

namespace fedlr {

// ===== fixed-point codec =====

// Real -> integer slots ahead of encryption. headroom_bits reserves space for
// summing up to 2^headroom addends (offset-binary packing consumes the same
// budget), so encoded magnitudes must stay below 2^(slot - headroom - 1).
struct FixedPointCodec {
  int scale_bits = 16;
  int slot_bits = 32;
  int headroom_bits = 8;

  std::int64_t limit() const {
    return std::int64_t(1) << (slot_bits - headroom_bits - 1);
  }
  double scale() const { return static_cast<double>(std::int64_t(1) << scale_bits); }
  void validate() const;
};

// round(x * 2^scale) with ties to even; FpOverflow names the first value whose
// magnitude reaches the headroom limit.
std::vector<std::int64_t> fp_encode(std::span<const double> values, const FixedPointCodec& codec);
std::vector<double> fp_decode(std::span<const std::int64_t> ints, const FixedPointCodec& codec);

// ===== Paillier =====

// Schoolbook Paillier over GMP. The public half is all the aggregating server
// ever holds: it can encrypt and add, and the decryption residues live only in
// PaillierPrivate, so "server never decrypts" is enforced by the type split.
class PaillierPublic {
 public:
  PaillierPublic() = default;
  PaillierPublic(mpz_class n, int key_bits);

  // m in [0, n); blinding factor drawn from the caller's stream
  mpz_class encrypt(const mpz_class& m, Rng& rng) const;
  mpz_class encrypt_signed(std::int64_t v, Rng& rng) const;  // negatives as n-complement
  mpz_class add(const mpz_class& c1, const mpz_class& c2) const;

  const mpz_class& n() const { return n_; }
  const mpz_class& n_squared() const { return n2_; }
  int key_bits() const { return key_bits_; }
  std::size_t ciphertext_bytes() const { return static_cast<std::size_t>(key_bits_) / 4; }

 private:
  mpz_class n_, n2_;
  int key_bits_ = 0;
};

class PaillierPrivate {
 public:
  PaillierPrivate() = default;
  PaillierPrivate(mpz_class n, mpz_class lambda, mpz_class mu);

  mpz_class decrypt(const mpz_class& c) const;  // in [0, n)
  std::int64_t decrypt_signed(const mpz_class& c) const;
  const mpz_class& n() const { return n_; }

 private:
  mpz_class n_, n2_, lambda_, mu_;
};

struct PaillierKeys {
  PaillierPublic pub;
  PaillierPrivate prv;
};

// Deterministic given (bits, seed): prime candidates come from the keyed
// stream. bits is the modulus width, >= 64; 256 is the test default, 2048 the
// benchmark setting.
PaillierKeys paillier_keygen(int bits, std::uint64_t seed);

// ===== per-element mode =====

struct ElementPayload {
  std::vector<mpz_class> cts;
  std::uint64_t byte_size(const PaillierPublic& pub) const {
    return static_cast<std::uint64_t>(cts.size()) * pub.ciphertext_bytes();
  }
};

ElementPayload encrypt_elements(std::span<const std::int64_t> ints, const PaillierPublic& pub,
                                Rng& rng);
void add_elements(ElementPayload& acc, const ElementPayload& other, const PaillierPublic& pub);
std::vector<std::int64_t> decrypt_elements(const ElementPayload& payload,
                                           const PaillierPrivate& prv);

// ===== packed (slot-vector) mode =====

// Emulates a slot-packed vector scheme: slots concatenate into 8096-slot
// blocks in offset-binary, so plain integer addition of blocks is slot-wise
// addition as long as every slot keeps headroom. A block's integer exceeds any
// practical Paillier message space, so it is encrypted in whole-slot limbs of
// floor((key_bits - 1) / slot_bits) slots, one ciphertext per limb; the limb
// cut never splits a slot, so headroom still rules out cross-limb carries.
struct SecurePayload {
  std::vector<std::vector<mpz_class>> blocks;  // block -> limb ciphertexts
  mpz_class guard;                             // sentinel limb, see decrypt_unpack
  std::int64_t n_slots = 0;                    // data slots, guard excluded
  int slots_per_block = 8096;
  int slots_per_limb = 0;
  int slot_bits = 32;

  int block_count() const { return static_cast<int>(blocks.size()); }
  // Modeled wire size: block_count * per-block ciphertext bytes. The guard is
  // an artifact-side integrity check and stays out of the accounting.
  std::uint64_t byte_size(const PaillierPublic& pub) const;
};

int block_count_for(std::int64_t n_slots, int slots_per_block);

SecurePayload pack_encrypt(std::span<const std::int64_t> ints, const FixedPointCodec& codec,
                           int slots_per_block, const PaillierPublic& pub, Rng& rng);
void add_packed(SecurePayload& acc, const SecurePayload& other, const PaillierPublic& pub);

// Decrypts and de-offsets the slot sums of n_addends payloads. Throws
// SlotOverflow when the addend count exceeds the codec's headroom, when the
// guard sentinel does not equal n_addends * its encode-time value, or when a
// decoded slot sum falls outside the reachable range.
std::vector<std::int64_t> decrypt_unpack(const SecurePayload& payload,
                                         const FixedPointCodec& codec,
                                         const PaillierPrivate& prv, int n_addends);

// ===== end-to-end helper =====

enum class SecureMode { kOff, kPerElement, kPacked };

struct SecureAggReport {
  double client_encrypt_s = 0.0;  // mean per client
  double server_add_s = 0.0;      // total across the aggregation
  std::uint64_t ciphertext_bytes = 0;  // per client payload
  std::uint64_t plaintext_bytes = 0;   // 4-byte-value equivalent of one payload
};

// Encrypts each client's already-weighted vector, sums ciphertexts with the
// public key only, decrypts once, and returns the real-valued sums. All client
// vectors must share a length. mode must not be kOff.
std::vector<double> secure_aggregate(const std::vector<std::vector<double>>& weighted_vectors,
                                     SecureMode mode, const FixedPointCodec& codec,
                                     int slots_per_block, const PaillierKeys& keys,
                                     std::uint64_t noise_seed, std::uint64_t round,
                                     SecureAggReport* report = nullptr);

}  // namespace fedlr
