#pragma once

#include <cstdint>
#include <string_view>

namespace et {

// Deterministic xorshift64* generator, seeded through one splitmix64 step.
//
// Seeding:   s0 = splitmix64(seed);  if s0 == 0 then s0 = 0x9E3779B97F4A7C15
// Step:      x ^= x >> 12;  x ^= x << 25;  x ^= x >> 27
// Output:    x * 0x2545F4914F6CDD1D
// Unit draw: (output >> 11) * 2^-53   ->  [0, 1)
//
// Same seed gives the same sequence on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    // uniform in [0,1)
    double next_unit();
    // uniform in [lo,hi)
    double uniform(double lo, double hi);
    // standard normal via Box-Muller (two unit draws per call, no caching)
    double normal();

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

    // Independent stream keyed by (seed, name); used for name-keyed
    // parameter initialization so toggling modules on/off never shifts
    // the draws of unrelated parameters.
    static Rng keyed(std::uint64_t seed, std::string_view name);

private:
    std::uint64_t state_;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s);

} // namespace et
