#include "dlab/rng.hpp"

#include <cmath>
#include <numbers>

#include "dlab/errors.hpp"

namespace dlab {

namespace {

std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace

Rng::Rng(std::uint64_t seed) : key_(mix64(seed)), counter_(0) {}

Rng::Rng(std::uint64_t key, std::uint64_t counter)
    : key_(key), counter_(counter) {}

Rng Rng::substream(std::string_view name) const {
    return Rng(mix64(key_ ^ fnv1a(name)), 0);
}

Rng Rng::substream(std::uint64_t index) const {
    return Rng(mix64(key_ + 0x632BE59BD9B4E019ULL * (index + 1)), 0);
}

std::uint64_t Rng::next_u64() {
    ++counter_;
    return mix64(key_ ^ (counter_ * 0xD6E8FEB86659FD93ULL));
}

double Rng::u01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

float Rng::uniform(float lo, float hi) {
    return lo + static_cast<float>(u01()) * (hi - lo);
}

float Rng::normal() {
    double u1 = u01();
    double u2 = u01();
    while (u1 <= 0.0) u1 = u01();
    return static_cast<float>(std::sqrt(-2.0 * std::log(u1)) *
                              std::cos(2.0 * std::numbers::pi * u2));
}

int Rng::uniform_int(int n) {
    if (n <= 0) throw DataError("Rng::uniform_int: n must be positive");
    std::uint64_t bound = static_cast<std::uint64_t>(n);
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return static_cast<int>(v % bound);
}

std::vector<int> Rng::sample_without_replacement(int n, int k) {
    if (k > n) throw DataError("Rng: sample size exceeds population");
    // Floyd's algorithm keeps draw count at k regardless of n.
    std::vector<int> out;
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    out.reserve(static_cast<std::size_t>(k));
    for (int j = n - k; j < n; ++j) {
        int t = uniform_int(j + 1);
        if (seen[static_cast<std::size_t>(t)]) t = j;
        seen[static_cast<std::size_t>(t)] = true;
        out.push_back(t);
    }
    return out;
}

}  // namespace dlab
