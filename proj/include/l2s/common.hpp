#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace l2s {

// Bad user input: malformed config files, out-of-range flags. CLI exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed on-disk data. byte_offset is -1 when the position is unknown.
struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, long long offset = -1)
        : std::runtime_error(offset >= 0 ? msg + " (byte offset " + std::to_string(offset) + ")" : msg),
          byte_offset(offset) {}
    long long byte_offset;
};

// Non-finite values or numerically impossible state. CLI exit code 3.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape mismatch; carries both shapes so callers can report them.
struct ShapeError : std::runtime_error {
    ShapeError(const std::string& op, std::size_t lr, std::size_t lc, std::size_t rr, std::size_t rc)
        : std::runtime_error(op + ": lhs " + std::to_string(lr) + "x" + std::to_string(lc) +
                             " vs rhs " + std::to_string(rr) + "x" + std::to_string(rc)),
          lhs_rows(lr), lhs_cols(lc), rhs_rows(rr), rhs_cols(rc) {}
    std::size_t lhs_rows, lhs_cols, rhs_rows, rhs_cols;
};

// Dense row-major matrix. The one bulk container shared across modules.
template <typename T>
struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

    T& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    T* row(std::size_t r) { return data.data() + r * cols; }
    const T* row(std::size_t r) const { return data.data() + r * cols; }
    std::size_t size() const { return data.size(); }

    template <typename U>
    Matrix<U> cast() const {
        Matrix<U> out(rows, cols);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

// Seeded RNG with a pinned normal sampler: std::normal_distribution's output
// sequence is implementation-defined, Box-Muller over mt19937_64 is not.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
    // Inclusive bounds.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(gen_);
    }
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }
    std::uint64_t raw() { return gen_(); }
    // Derive an independent stream; used to give each subsystem its own RNG.
    Rng fork() { return Rng(gen_() ^ 0x9e3779b97f4a7c15ull); }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

inline bool all_finite(const float* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(p[i])) return false;
    return true;
}

}  // namespace l2s
