#include "mfsg/rng.hpp"

#include <cmath>

namespace mfsg {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t RngSpec::stream_key(std::uint64_t purpose, std::uint64_t realization,
                                  std::uint64_t particle) const {
  std::uint64_t key = splitmix64(seed);
  key = splitmix64(key ^ purpose);
  key = splitmix64(key ^ realization);
  key = splitmix64(key ^ particle);
  return key;
}

RngStream::RngStream(const RngSpec& spec, std::uint64_t purpose, std::uint64_t realization,
                     std::uint64_t particle)
    : engine_(spec.stream_key(purpose, realization, particle)) {}

RngStream::RngStream(std::uint64_t raw_key) : engine_(raw_key) {}

double RngStream::uniform() {
  // 53-bit mantissa, value in [0, 1).
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RngStream::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  double u2 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * M_PI * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

}  // namespace mfsg
