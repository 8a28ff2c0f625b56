#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>
#include <vector>

namespace fedfed {

// Deterministic random streams. The simulator never touches <random>
// distributions because their output is implementation-defined; everything
// here is pinned bit-for-bit so identical seeds reproduce identical
// experiments on any platform.
//
// Streams are derived, not shared: hash(seed, tag, client, round) gives each
// client/round an independent generator, which is what makes parallel client
// execution scheduling-independent.

constexpr uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// FNV-1a over a short label; used to turn stream names into derivation parts.
constexpr uint64_t stream_tag(std::string_view name) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

class RngStream {
public:
    explicit RngStream(uint64_t seed);

    // hash-combine of (seed, parts...) through splitmix64.
    static RngStream derive(uint64_t seed, std::initializer_list<uint64_t> parts);

    uint64_t next_u64();
    double uniform01();                       // [0, 1)
    double uniform(double lo, double hi);
    double normal(double mean = 0.0, double stddev = 1.0);
    double laplace(double scale);
    double gamma(double shape);               // unit scale
    std::vector<double> dirichlet(double alpha, int k);
    int uniform_int(int n);                   // [0, n)

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            int j = uniform_int(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

    // Uniform draw of `count` distinct values from [0, n), ascending.
    std::vector<int> sample_without_replacement(int n, int count);

private:
    uint64_t s_[4];
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace fedfed
