#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>

// Counter-based random number generation. Every consumer addresses draws by
// (seed, stream tag, stream parameters, draw index), so any draw can be
// produced independently of any other. This is what makes ensemble fills,
// Monte-Carlo loops and grid sweeps parallelizable without losing
// reproducibility: the value at a given index never depends on how many
// threads produced the surrounding ones.
namespace mtcs {

// Stream tags. A stream is identified by a tag plus up to a few integer
// parameters (block row, block column, iteration, ...). Keep this list
// append-only; reordering changes every downstream draw.
enum StreamTag : std::uint64_t {
  kStreamEnsembleBlock = 1,  // params: block row, block column
  kStreamMeasureNoise = 2,   // params: terminal id
  kStreamSignalSupport = 3,  // params: none
  kStreamSignalGauss = 4,    // params: none
  kStreamMmseSupport = 5,    // params: none
  kStreamMmseGauss = 6,      // params: none
  kStreamMmseNoise = 7,      // params: none
  kStreamFreshEnsemble = 8,  // params: terminal id, iteration
  kStreamOracle = 100,       // test-only consumers
};

std::uint64_t splitmix64(std::uint64_t x);

// Philox4x32-10 block cipher. 128-bit counter, 64-bit key, 128-bit output.
std::array<std::uint32_t, 4> philox4x32(std::uint64_t key, std::uint64_t ctr_hi,
                                        std::uint64_t ctr_lo);

// A deterministic, splittable stream of random values. The key is the user
// seed; the high counter word is derived by hashing the tag and parameters,
// so distinct (tag, params) never collide and the draw index walks the low
// counter word. All accessors are const and thread-safe.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t tag,
               std::initializer_list<std::uint64_t> params = {});

  std::uint64_t bits_at(std::uint64_t index) const;

  // Uniform on [0, 1), 53-bit resolution.
  double uniform_at(std::uint64_t index) const;

  // Standard normal via Box-Muller. Consumes two uniform draws internally;
  // indices of distinct normals never overlap.
  double gaussian_at(std::uint64_t index) const;

  std::uint64_t seed() const { return key_; }
  std::uint64_t stream_id() const { return stream_; }

 private:
  std::uint64_t key_;
  std::uint64_t stream_;
};

}  // namespace mtcs
