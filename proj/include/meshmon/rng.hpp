#pragma once

#include <cstdint>
#include <random>

namespace meshmon {

// Deterministic uniform source. The double conversion is done by hand so the
// produced stream does not depend on the standard library's distribution
// implementations; identical seeds give identical probe outcomes everywhere.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double u01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // True with probability p.
    bool chance(double p) {
        if (p <= 0.0) return false;
        if (p >= 1.0) return true;
        return u01() < p;
    }

    // Uniform in [0, hi).
    double uniform(double hi) { return u01() * hi; }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }

  private:
    std::mt19937_64 engine_;
};

}  // namespace meshmon
