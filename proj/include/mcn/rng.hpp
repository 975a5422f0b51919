#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace mcn {

// Small counter-free PRNG built on splitmix64. The full generator state is a
// single u64, which keeps checkpoint serialization trivial and lets every
// component derive an independent named stream from one run seed.
class Rng {
  public:
    Rng() : state_(0x9e3779b97f4a7c15ULL) {}
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t state() const { return state_; }
    void set_state(uint64_t s) { state_ = s; }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1). 53-bit mantissa.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Unbiased via rejection; n must be > 0.
    uint64_t next_below(uint64_t n) {
        uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    int uniform_int(int lo, int hi) {  // inclusive range
        return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi - lo + 1)));
    }

    // Box-Muller, one value per call. Draws two uniforms each time so the
    // generator has no hidden cached state to serialize.
    double normal() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    // Derive an independent stream. Forking does not advance this generator,
    // so components can be re-run in any order with identical results.
    Rng fork(const std::string& name) const {
        uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the stream name
        for (unsigned char c : name) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        Rng child(state_ ^ h);
        child.next_u64();  // decorrelate nearby seeds
        return Rng(child.state_);
    }

    Rng fork(uint64_t salt) const {
        Rng child(state_ ^ (salt * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL));
        child.next_u64();
        return Rng(child.state_);
    }

  private:
    uint64_t state_;
};

}  // namespace mcn
