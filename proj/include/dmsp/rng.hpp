#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

namespace dmsp {

// Seeded generator with pinned uniform/normal transforms so results are
// reproducible bit-for-bit across standard library implementations
// (std::normal_distribution et al. are implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(splitmix(seed)) {}

    std::uint64_t next_u64() {
        // xorshift* over a splitmix-initialized state
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545F4914F6CDD1DULL;
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in (0, 1]
    double uniform_pos() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller without caching the second deviate; keeps the state a single word.
    double normal() {
        const double u1 = uniform_pos();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent stream for a named purpose under one user-facing seed.
    static std::uint64_t derive(std::uint64_t seed, const char* tag) {
        std::uint64_t h = 1469598103934665603ULL;
        for (const char* p = tag; *p; ++p) {
            h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(*p));
            h *= 1099511628211ULL;
        }
        return splitmix(seed ^ h);
    }

    std::string serialize() const {
        std::ostringstream os;
        os << state_;
        return os.str();
    }

    static Rng deserialize(const std::string& s) {
        Rng r(0);
        std::istringstream is(s);
        is >> r.state_;
        return r;
    }

    bool operator==(const Rng& other) const { return state_ == other.state_; }

private:
    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        x = x ^ (x >> 31);
        return x ? x : 0x9E3779B97F4A7C15ULL;  // xorshift state must be nonzero
    }

    std::uint64_t state_;
};

}  // namespace dmsp
