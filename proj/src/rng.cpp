#include "fedfed/rng.hpp"

#include <algorithm>
#include <cmath>

#include "fedfed/common.hpp"

namespace fedfed {

namespace {
constexpr uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

RngStream::RngStream(uint64_t seed) {
    // xoshiro256++ seeded through splitmix64, per the generator's reference
    // seeding procedure.
    uint64_t s = seed;
    for (auto& w : s_) {
        s = splitmix64(s);
        w = s;
    }
    if (s_[0] == 0 && s_[1] == 0 && s_[2] == 0 && s_[3] == 0) s_[0] = 1;
}

RngStream RngStream::derive(uint64_t seed, std::initializer_list<uint64_t> parts) {
    uint64_t h = splitmix64(seed);
    for (uint64_t p : parts) h = splitmix64(h ^ p);
    return RngStream(h);
}

uint64_t RngStream::next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double RngStream::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform01();
}

double RngStream::normal(double mean, double stddev) {
    if (have_spare_) {
        have_spare_ = false;
        return mean + stddev * spare_;
    }
    // Marsaglia polar method.
    double u, v, s;
    do {
        u = 2.0 * uniform01() - 1.0;
        v = 2.0 * uniform01() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    have_spare_ = true;
    return mean + stddev * u * m;
}

double RngStream::laplace(double scale) {
    if (scale < 0.0) throw DomainError("laplace scale must be non-negative");
    double u;
    do {
        u = uniform01();
    } while (u == 0.0);
    u -= 0.5;  // (-0.5, 0.5)
    const double sign = u < 0.0 ? -1.0 : 1.0;
    return -scale * sign * std::log(1.0 - 2.0 * std::abs(u));
}

double RngStream::gamma(double shape) {
    if (shape <= 0.0) throw DomainError("gamma shape must be positive");
    if (shape < 1.0) {
        // Boost to shape+1, then scale back (Marsaglia-Tsang trick).
        double u;
        do {
            u = uniform01();
        } while (u == 0.0);
        return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform01();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

std::vector<double> RngStream::dirichlet(double alpha, int k) {
    if (alpha <= 0.0) throw DomainError("dirichlet concentration must be positive");
    if (k < 1) throw DomainError("dirichlet dimension must be >= 1");
    std::vector<double> out(static_cast<size_t>(k));
    double sum = 0.0;
    for (auto& g : out) {
        g = gamma(alpha);
        sum += g;
    }
    if (sum <= 0.0) {
        for (auto& g : out) g = 1.0 / k;
        return out;
    }
    for (auto& g : out) g /= sum;
    return out;
}

int RngStream::uniform_int(int n) {
    if (n <= 0) throw DomainError("uniform_int bound must be positive");
    // Rejection to avoid modulo bias.
    const uint64_t bound = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    uint64_t r;
    do {
        r = next_u64();
    } while (r >= limit);
    return static_cast<int>(r % bound);
}

std::vector<int> RngStream::sample_without_replacement(int n, int count) {
    if (count < 0 || count > n) throw DomainError("sample count must be in [0, n]");
    std::vector<int> ids(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) ids[static_cast<size_t>(i)] = i;
    // Partial Fisher-Yates: the first `count` slots are the draw.
    for (int i = 0; i < count; ++i) {
        int j = i + uniform_int(n - i);
        std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(j)]);
    }
    ids.resize(static_cast<size_t>(count));
    std::sort(ids.begin(), ids.end());
    return ids;
}

}  // namespace fedfed
