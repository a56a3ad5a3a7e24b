#include "acrestore/common.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace acrestore {

std::string to_hex(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

std::string Fnv1a::hex() const { return to_hex(state_); }

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

std::uint64_t tag_of(const std::string& name) {
    Fnv1a h;
    h.feed(name);
    return h.value();
}

double SeededRng::normal(double mean, double std) {
    if (have_spare_) {
        have_spare_ = false;
        return mean + std * spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return mean + std * radius * std::cos(angle);
}

std::vector<std::size_t> SeededRng::sample_without_replacement(std::size_t pool, std::size_t k) {
    k = std::min(k, pool);
    std::vector<std::size_t> indices(pool);
    for (std::size_t i = 0; i < pool; ++i) indices[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(next_u64() % (pool - i));
        std::swap(indices[i], indices[j]);
    }
    indices.resize(k);
    return indices;
}

}  // namespace acrestore
