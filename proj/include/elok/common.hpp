#ifndef ELOK_COMMON_HPP
#define ELOK_COMMON_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace elok {

inline constexpr const char* kVersion = "0.1.0";

// Raised for malformed or inconsistent inputs (files, sizes, empty clouds).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised when a computation produces non-finite or otherwise unusable values.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised for bad command-line or config usage.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic randomness.
//
// std::mt19937_64 produces a portable bit stream, but the standard
// distributions are implementation-defined. Everything that must be
// byte-reproducible across platforms goes through this wrapper, which maps
// raw engine output to doubles itself.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Combines a master seed with stream identifiers into an independent seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                              std::uint64_t c = 0) {
    std::uint64_t s = seed;
    std::uint64_t h = splitmix64(s);
    s ^= a * 0x9e3779b97f4a7c15ULL;
    h ^= splitmix64(s);
    s ^= b * 0xc2b2ae3d27d4eb4fULL;
    h ^= splitmix64(s);
    s ^= c * 0x165667b19e3779f9ULL;
    h ^= splitmix64(s);
    return h;
}

class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {
        // warm up so nearby seeds decorrelate
        for (int i = 0; i < 4; ++i) splitmix64(state_);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // standard normal via Marsaglia polar method (stateless, no cached spare)
    double normal() {
        for (;;) {
            double u = uniform(-1.0, 1.0);
            double v = uniform(-1.0, 1.0);
            double s = u * u + v * v;
            if (s > 0.0 && s < 1.0) {
                double m = std::sqrt(-2.0 * std::log(s) / s);
                return u * m;
            }
        }
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Hashing and formatting
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64(s.data(), s.size(), h);
}

std::string hex64(std::uint64_t v);

// Bit-exact double <-> text via C99 hexfloat.
std::string format_hexdouble(double v);
double parse_hexdouble(const std::string& s);

// Short decimal formatting for human-readable artifacts (CSV, SVG).
std::string format_g(double v, int digits = 9);

// ---------------------------------------------------------------------------
// Flat key=value config files ('#' comments, one pair per line).
// ---------------------------------------------------------------------------

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
KeyValues read_key_value_file(const std::string& path);

// Canonical serialization (sorted keys) used for config hashing.
std::string canonical_key_values(const KeyValues& kv);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
// write to <path>.tmp then rename, so readers never see partial content
void write_text_file_atomic(const std::string& path, const std::string& content);

std::vector<std::string> split_ws(const std::string& line);
std::vector<std::string> split_char(const std::string& line, char sep);

// Runs fn(0..n-1) across up to `threads` workers. Safe only when the work
// items are independent; exceptions are re-thrown on the calling thread.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (;;) {
                    std::size_t i = next.fetch_add(1);
                    if (i >= n) return;
                    fn(i);
                }
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (std::thread& t : pool) t.join();
    for (std::exception_ptr& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace elok

#endif
