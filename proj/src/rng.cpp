#include "chemnne/rng.hpp"

#include <cmath>
#include <cstring>

#include "chemnne/errors.hpp"

namespace chemnne {

namespace {

inline std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

}  // namespace

std::uint64_t Rng::splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) {
    // Expand the seed through splitmix64 per the xoshiro authors' advice.
    std::uint64_t x = seed;
    for (auto& w : s_) {
        x = splitmix64(x);
        w = x;
    }
    // All-zero state is invalid for xoshiro; splitmix64 of distinct inputs
    // cannot produce four zeros, but guard anyway.
    if (s_[0] == 0 && s_[1] == 0 && s_[2] == 0 && s_[3] == 0) s_[0] = 1;
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

double Rng::normal(double mean, double stddev) {
    return mean + stddev * normal();
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
    if (n == 0) throw ContractError("uniform_index: n must be positive");
    // Rejection sampling over the largest multiple of n below 2^64.
    const std::uint64_t limit = std::uint64_t(0) - (std::uint64_t(0) - n) % n;
    std::uint64_t x = next_u64();
    while (limit != 0 && x >= limit) x = next_u64();
    return x % n;
}

std::vector<double> Rng::serialize() const {
    // 4 state words x 4 u16 chunks, then spare flag, then spare double as
    // 4 u16 chunks of its bit pattern. Every word fits exactly in f32.
    std::vector<double> out;
    out.reserve(21);
    for (const auto w : s_) {
        for (int c = 0; c < 4; ++c) {
            out.push_back(static_cast<double>((w >> (16 * c)) & 0xffffULL));
        }
    }
    out.push_back(has_spare_ ? 1.0 : 0.0);
    std::uint64_t bits = 0;
    std::memcpy(&bits, &spare_, sizeof(bits));
    for (int c = 0; c < 4; ++c) {
        out.push_back(static_cast<double>((bits >> (16 * c)) & 0xffffULL));
    }
    return out;
}

Rng Rng::deserialize(const std::vector<double>& words) {
    if (words.size() != 21) throw ContractError("rng state must have 21 words");
    Rng rng;
    for (int i = 0; i < 4; ++i) {
        std::uint64_t w = 0;
        for (int c = 0; c < 4; ++c) {
            w |= static_cast<std::uint64_t>(words[4 * i + c]) << (16 * c);
        }
        rng.s_[static_cast<std::size_t>(i)] = w;
    }
    rng.has_spare_ = words[16] != 0.0;
    std::uint64_t bits = 0;
    for (int c = 0; c < 4; ++c) {
        bits |= static_cast<std::uint64_t>(words[17 + c]) << (16 * c);
    }
    std::memcpy(&rng.spare_, &bits, sizeof(bits));
    return rng;
}

bool Rng::operator==(const Rng& other) const {
    return s_ == other.s_ && has_spare_ == other.has_spare_ &&
           (has_spare_ ? spare_ == other.spare_ : true);
}

}  // namespace chemnne
