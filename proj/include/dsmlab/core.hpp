// core.hpp
//
// Shared vocabulary for the dsmlab headers: dense vectors, small row-major
// matrices, and the exception types every module throws.

#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dsmlab {

using Vec = std::vector<double>;
using ConstSpan = std::span<const double>;

/// Raised when an operation is asked for something the chosen family or
/// distribution cannot provide (e.g. quadrature in d > 1).
class UnsupportedError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Raised by training loops when the loss leaves the finite, bounded region.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major matrix, sized for Jacobians of a handful of parameters.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

inline void require(bool cond, const std::string& what) {
    if (!cond) {
        throw std::invalid_argument(what);
    }
}

inline void require_same_dim(std::size_t a, std::size_t b, const char* where) {
    if (a != b) {
        throw std::invalid_argument(std::string(where) + ": dimension mismatch (" + std::to_string(a) +
                                    " vs " + std::to_string(b) + ")");
    }
}

inline double dot(ConstSpan a, ConstSpan b) {
    require_same_dim(a.size(), b.size(), "dot");
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double squared_norm(ConstSpan a) { return std::inner_product(a.begin(), a.end(), a.begin(), 0.0); }

inline double norm(ConstSpan a) { return std::sqrt(squared_norm(a)); }

/// out^T = v^T M, i.e. the vector-Jacobian product for M with shape (v.size() x p).
inline Vec vjp(ConstSpan v, const Matrix& m) {
    require_same_dim(v.size(), m.rows, "vjp");
    Vec out(m.cols, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        if (v[r] == 0.0) {
            continue;
        }
        for (std::size_t c = 0; c < m.cols; ++c) {
            out[c] += v[r] * m(r, c);
        }
    }
    return out;
}

inline bool all_finite(ConstSpan v) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

}  // namespace dsmlab
