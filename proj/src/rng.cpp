#include "mtcs/rng.hpp"

#include <cmath>

namespace mtcs {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void philox_round(std::uint32_t (&c)[4], std::uint32_t k0, std::uint32_t k1) {
  const std::uint64_t p0 = static_cast<std::uint64_t>(kPhiloxM0) * c[0];
  const std::uint64_t p1 = static_cast<std::uint64_t>(kPhiloxM1) * c[2];
  const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
  const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
  const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
  const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
  c[0] = hi1 ^ c[1] ^ k0;
  c[1] = lo1;
  c[2] = hi0 ^ c[3] ^ k1;
  c[3] = lo0;
}

}  // namespace

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::array<std::uint32_t, 4> philox4x32(std::uint64_t key, std::uint64_t ctr_hi,
                                        std::uint64_t ctr_lo) {
  std::uint32_t c[4] = {
      static_cast<std::uint32_t>(ctr_lo), static_cast<std::uint32_t>(ctr_lo >> 32),
      static_cast<std::uint32_t>(ctr_hi), static_cast<std::uint32_t>(ctr_hi >> 32)};
  std::uint32_t k0 = static_cast<std::uint32_t>(key);
  std::uint32_t k1 = static_cast<std::uint32_t>(key >> 32);
  for (int round = 0; round < 10; ++round) {
    philox_round(c, k0, k1);
    k0 += kPhiloxW0;
    k1 += kPhiloxW1;
  }
  return {c[0], c[1], c[2], c[3]};
}

RandomStream::RandomStream(std::uint64_t seed, std::uint64_t tag,
                           std::initializer_list<std::uint64_t> params)
    : key_(seed) {
  std::uint64_t h = splitmix64(tag);
  for (std::uint64_t p : params) h = splitmix64(h ^ p);
  stream_ = h;
}

std::uint64_t RandomStream::bits_at(std::uint64_t index) const {
  // Each Philox block yields two 64-bit words; pick by parity.
  const auto block = philox4x32(key_, stream_, index >> 1);
  if (index & 1)
    return (static_cast<std::uint64_t>(block[3]) << 32) | block[2];
  return (static_cast<std::uint64_t>(block[1]) << 32) | block[0];
}

double RandomStream::uniform_at(std::uint64_t index) const {
  return static_cast<double>(bits_at(index) >> 11) * 0x1.0p-53;
}

double RandomStream::gaussian_at(std::uint64_t index) const {
  // u1 is shifted into (0, 1] so the log never sees zero.
  const std::uint64_t b0 = bits_at(2 * index);
  const std::uint64_t b1 = bits_at(2 * index + 1);
  const double u1 = (static_cast<double>(b0 >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(b1 >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

}  // namespace mtcs
