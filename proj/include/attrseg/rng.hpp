#pragma once

#include <cstdint>

namespace attrseg {

// PCG32 with a fixed stream. We roll our own generator (and Box-Muller below)
// instead of <random> because libstdc++/libc++ distributions are not
// bit-compatible across implementations, and checkpoints/datasets must be
// reproducible from a seed alone.
class Rng {
public:
    explicit Rng(uint64_t seed) { state_ = 0u; next_u32(); state_ += seed + 0x853c49e6748fea9bULL; next_u32(); }

    uint32_t next_u32() {
        uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + 0xda3e39cb94b95bdbULL;
        uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
        uint32_t rot = static_cast<uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
    }

    // uniform in [0, 1)
    double uniform() { return next_u32() * (1.0 / 4294967296.0); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint32_t below(uint32_t n) { return static_cast<uint32_t>((static_cast<uint64_t>(next_u32()) * n) >> 32); }

    // standard normal via Box-Muller; one value per call, spare cached
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    uint64_t state_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Derives an independent child seed, for giving each component its own stream.
uint64_t seed_child(uint64_t seed, uint64_t salt);

}  // namespace attrseg
