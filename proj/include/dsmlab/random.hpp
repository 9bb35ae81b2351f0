// random.hpp
//
// Seeded random streams and the shared sample batch.
//
// Every stochastic quantity in dsmlab is drawn from std::mt19937_64 (the
// 64-bit Mersenne Twister). A stream is identified by (seed, stream id); the
// pair is expanded through std::seed_seq so that neighbouring ids give
// unrelated sequences. Normal variates come from std::normal_distribution,
// which makes results reproducible bit-for-bit within one standard library,
// not across standard libraries.

#pragma once

#include <cstdint>
#include <random>

#include "dsmlab/core.hpp"

namespace dsmlab {

class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
        engine_.seed(seq);
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    std::uint64_t next_u64() { return engine_(); }

    /// Uniform index in [0, n).
    std::size_t index(std::size_t n) {
        require(n > 0, "Rng::index: empty range");
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
    }

    /// A child stream; scenario code uses one child per named purpose.
    Rng child(std::uint64_t stream) const { return Rng(seed_, stream_ * 0x9E3779B97F4A7C15ULL + stream + 1); }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Standardized base draws shared by every estimator evaluated on one batch.
///
/// Consumption order from the seeded stream is fixed:
///   1. x-draws, per sample: one component uniform, then `dim` standard normals
///   2. all forward-process noise draws nu (n x dim)
///   3. all encoder noise draws eta (n x encoder_dim)
/// Estimators turn these into x = mu + s * eps and x_t = x + sigma * nu,
/// so a single batch gives common random numbers to every objective term.
struct SampleBatch {
    std::uint64_t seed = 0;
    std::size_t n = 0;
    std::size_t dim = 0;
    std::size_t encoder_dim = 0;
    Vec component_u;  // n
    Vec eps;          // n * dim
    Vec nu;           // n * dim
    Vec eta;          // n * encoder_dim

    SampleBatch() = default;

    SampleBatch(std::uint64_t seed_, std::size_t n_, std::size_t dim_, std::size_t encoder_dim_ = 0)
        : seed(seed_), n(n_), dim(dim_), encoder_dim(encoder_dim_) {
        Rng rng(seed);
        component_u.resize(n);
        eps.resize(n * dim);
        nu.resize(n * dim);
        eta.resize(n * encoder_dim);
        for (std::size_t i = 0; i < n; ++i) {
            component_u[i] = rng.uniform();
            for (std::size_t j = 0; j < dim; ++j) {
                eps[i * dim + j] = rng.normal();
            }
        }
        for (double& v : nu) {
            v = rng.normal();
        }
        for (double& v : eta) {
            v = rng.normal();
        }
    }

    ConstSpan eps_row(std::size_t i) const { return ConstSpan(eps).subspan(i * dim, dim); }
    ConstSpan nu_row(std::size_t i) const { return ConstSpan(nu).subspan(i * dim, dim); }
    ConstSpan eta_row(std::size_t i) const { return ConstSpan(eta).subspan(i * encoder_dim, encoder_dim); }
};

}  // namespace dsmlab
