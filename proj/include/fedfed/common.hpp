#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedfed {

// Error taxonomy. Every failure the library raises maps onto one of these so
// callers (and the CLI exit-code mapping) can tell misconfiguration apart
// from numeric divergence.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionError : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct ConsistencyError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct ProtocolError : Error { using Error::Error; };
struct InfeasibleError : Error { using Error::Error; };

// Dense row-major matrix of doubles. Deliberately minimal: the engine only
// needs storage, indexing and row views.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0)
        : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {
        if (r < 0 || c < 0) throw DimensionError("matrix dimensions must be non-negative");
    }

    double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    std::span<double> row(int r) { return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)}; }
    std::span<const double> row(int r) const {
        return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
    }

    bool empty() const { return rows == 0 || cols == 0; }
};

double l2_norm(std::span<const double> v);

// Runs fn(i) for i in [0, count) on up to `threads` workers. Results must be
// written to per-index slots; the first exception thrown by any worker is
// rethrown after all workers join, so a failing client aborts the round.
void parallel_for(int count, int threads, const std::function<void(int)>& fn);

}  // namespace fedfed
