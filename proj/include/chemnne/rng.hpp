#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace chemnne {

/// Deterministic xoshiro256++ generator with Box-Muller normals.
///
/// Self-contained (no <random> distributions) so that streams are
/// bit-identical across platforms and standard libraries, and so the full
/// state round-trips exactly through checkpoint files.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform();
    double uniform(double lo, double hi);

    /// Standard normal via Box-Muller (one spare cached).
    double normal();
    double normal(double mean, double stddev);

    /// Uniform integer in [0, n), unbiased. n must be > 0.
    std::uint64_t uniform_index(std::uint64_t n);

    /// State as exact-in-f32 words (u16 chunks + spare-bit framing); see
    /// checkpoint format. deserialize() restores the identical stream.
    std::vector<double> serialize() const;
    static Rng deserialize(const std::vector<double>& words);

    bool operator==(const Rng& other) const;

    /// 64-bit mix used for split hashing; stateless.
    static std::uint64_t splitmix64(std::uint64_t x);

private:
    Rng() = default;
    std::array<std::uint64_t, 4> s_{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace chemnne
