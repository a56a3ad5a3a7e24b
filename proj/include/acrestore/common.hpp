#pragma once

#include <atomic>
#include <bit>
#include <cstdint>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace acrestore {

// ---------------------------------------------------------------------------
// Error hierarchy. Input/structural problems are exceptions; numerical
// non-convergence is reported through result structs, not thrown.
// ---------------------------------------------------------------------------

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FingerprintMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SingularSystemError : std::runtime_error {
    explicit SingularSystemError(const std::string& msg, int unobservable_dim = -1)
        : std::runtime_error(msg), unobservable_dimension(unobservable_dim) {}
    int unobservable_dimension;
};

// ---------------------------------------------------------------------------
// Stable fingerprints. FNV-1a over a canonical byte sequence; doubles are
// hashed by bit pattern so equal values always collide and nothing else does.
// ---------------------------------------------------------------------------

class Fnv1a {
public:
    void feed(const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ull;
        }
    }
    void feed(const std::string& s) { feed(s.data(), s.size()); }
    void feed(double v) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        feed(&bits, sizeof bits);
    }
    void feed(std::int64_t v) { feed(&v, sizeof v); }
    void feed(int v) { feed(static_cast<std::int64_t>(v)); }

    std::uint64_t value() const { return state_; }
    std::string hex() const;

private:
    std::uint64_t state_ = 0xcbf29ce484222325ull;
};

std::string to_hex(std::uint64_t v);

// splitmix64, used to derive independent child seeds from (seed, tag) pairs.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag);
std::uint64_t tag_of(const std::string& name);

// ---------------------------------------------------------------------------
// Seeded RNG. mt19937_64's bit stream is pinned by the standard; the normal
// sampler is Box-Muller on explicit uniforms, so every draw sequence is
// reproducible across standard libraries, not just per-platform.
// ---------------------------------------------------------------------------

class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : engine_(seed) {}
    SeededRng(std::uint64_t seed, const std::string& stream)
        : engine_(mix_seed(seed, tag_of(stream))) {}

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal(double mean = 0.0, double std = 1.0);

    std::uint64_t next_u64() { return engine_(); }

    // k distinct indices from {0, ..., pool-1}, partial Fisher-Yates.
    std::vector<std::size_t> sample_without_replacement(std::size_t pool, std::size_t k);

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Scenario-level worker pool: applies fn(i) for i in [0, count) across up to
// `threads` workers. Results must be written into per-index slots by the
// caller; completion order never leaks into the output.
// ---------------------------------------------------------------------------

template <typename Fn>
void parallel_for_indexed(std::size_t count, unsigned threads, Fn&& fn) {
    if (count == 0) return;
    unsigned workers = threads == 0 ? std::thread::hardware_concurrency() : threads;
    if (workers <= 1 || count == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, count));
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto body = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace acrestore
