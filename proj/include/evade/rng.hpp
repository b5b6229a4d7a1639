#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

namespace evade {

// Counter-based pseudo-random stream. Each (seed, stream) pair yields an
// independent sequence; draws depend only on (seed, stream, counter), so
// results are reproducible across platforms and independent of call sites
// on other streams. Normal draws use Box-Muller on the uniform stream.
class Rng {
 public:
  Rng() : Rng(0, 0) {}
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream), key_(mix(seed ^ mix(stream + 0x632be59bd9b4e019ull))) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  // Child stream derived from (seed, this stream, id). Children never
  // overlap with the parent or with siblings of distinct ids.
  Rng split(std::uint64_t id) const {
    return Rng(seed_, mix(stream_ + 0x9e3779b97f4a7c15ull * (id + 1)));
  }

  std::uint64_t next_u64() {
    return mix(key_ + 0x9e3779b97f4a7c15ull * ++counter_);
  }

  // Uniform in (0, 1); never returns exactly 0 or 1.
  double uniform() {
    const double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return u == 0.0 ? 0x1.0p-53 : u;
  }

  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  std::vector<std::uint8_t> serialize() const {
    std::vector<std::uint8_t> out(sizeof(std::uint64_t) * 3 + 1 + sizeof(double));
    std::uint8_t* p = out.data();
    auto put = [&p](const void* src, std::size_t n) {
      std::memcpy(p, src, n);
      p += n;
    };
    put(&seed_, 8);
    put(&stream_, 8);
    put(&counter_, 8);
    const std::uint8_t flag = have_cached_ ? 1 : 0;
    put(&flag, 1);
    put(&cached_, 8);
    return out;
  }

  static Rng deserialize(const std::uint8_t* p, std::size_t n) {
    Rng r;
    if (n < 33) return r;
    std::memcpy(&r.seed_, p, 8);
    std::memcpy(&r.stream_, p + 8, 8);
    std::memcpy(&r.counter_, p + 16, 8);
    r.have_cached_ = p[24] != 0;
    std::memcpy(&r.cached_, p + 25, 8);
    r.key_ = mix(r.seed_ ^ mix(r.stream_ + 0x632be59bd9b4e019ull));
    return r;
  }

  static constexpr std::size_t serialized_size() { return 33; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace evade
