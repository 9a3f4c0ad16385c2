#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace stagerl {

// Half-open character range [begin, end) into a trajectory text.
struct Span {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    bool empty() const { return begin >= end; }
    bool contains(std::size_t pos) const { return pos >= begin && pos < end; }
    bool operator==(const Span&) const = default;
};

class ParseError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class InvariantViolation : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Content-keyed seeding: the same (seed, parts...) always yields the same
// stream regardless of scheduling, so concurrent and serialized runs agree.
inline std::uint64_t mix_seed(std::uint64_t seed) { return splitmix64(seed); }

template <typename... Rest>
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t next, Rest... rest) {
    return mix_seed(splitmix64(seed ^ splitmix64(next)), rest...);
}

template <typename... Rest>
std::uint64_t mix_seed(std::uint64_t seed, std::string_view next, Rest... rest) {
    return mix_seed(splitmix64(seed ^ fnv1a(next)), rest...);
}

template <typename... Parts>
std::mt19937_64 make_rng(std::uint64_t seed, Parts... parts) {
    return std::mt19937_64(mix_seed(seed, parts...));
}

inline std::string_view trim_view(std::string_view s) {
    const char* ws = " \t\r\n";
    auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

inline std::string trim(std::string_view s) { return std::string(trim_view(s)); }

}  // namespace stagerl
