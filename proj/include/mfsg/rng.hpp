#pragma once

#include <cstdint>
#include <random>

namespace mfsg {

// Stream purposes. Every consumer of randomness draws from a stream keyed by
// (seed, purpose, realization, particle), so any particle is reproducible in
// isolation and results do not depend on how work is partitioned.
namespace stream {
constexpr std::uint64_t kCommonNoise = 1;
constexpr std::uint64_t kIdiosyncraticNoise = 2;
constexpr std::uint64_t kInitialState = 3;
constexpr std::uint64_t kGuess = 4;
constexpr std::uint64_t kSampler = 5;
constexpr std::uint64_t kMonteCarlo = 6;
constexpr std::uint64_t kDirection = 7;
}  // namespace stream

struct RngSpec {
  std::uint64_t seed = 0x9e3779b97f4a7c15ULL;

  std::uint64_t stream_key(std::uint64_t purpose, std::uint64_t realization,
                           std::uint64_t particle) const;
};

// Counter-keyed Gaussian/uniform stream. Normals come from Box-Muller over
// mt19937_64 uniforms with a cached spare, so consumption per draw is fixed
// and bit-reproducible for a given key.
class RngStream {
 public:
  RngStream(const RngSpec& spec, std::uint64_t purpose, std::uint64_t realization,
            std::uint64_t particle);
  explicit RngStream(std::uint64_t raw_key);

  double uniform();   // [0, 1)
  double gaussian();  // N(0, 1)

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace mfsg
