// estimate.hpp
//
// Monte-Carlo values with standard errors.

#pragma once

#include <cmath>
#include <cstddef>

#include "dsmlab/core.hpp"

namespace dsmlab {

/// A Monte-Carlo mean with its standard error (sample std / sqrt(n)).
struct MCEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t n = 0;

    /// |value - target| <= k * std_error + floor
    bool within(double target, double k, double floor = 1e-8) const {
        return std::abs(value - target) <= k * std_error + floor;
    }

    /// Distance to target in units of standard error (infinite if SE is zero and they differ).
    double z_score(double target) const {
        const double diff = std::abs(value - target);
        if (std_error > 0.0) {
            return diff / std_error;
        }
        return diff == 0.0 ? 0.0 : INFINITY;
    }
};

/// Welford running mean and variance.
class Accumulator {
public:
    void add(double x) {
        ++n_;
        const double delta = x - mean_;
        mean_ += delta / static_cast<double>(n_);
        m2_ += delta * (x - mean_);
    }

    std::size_t count() const { return n_; }
    double mean() const { return mean_; }
    double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }

    MCEstimate estimate() const {
        require(n_ >= 2, "MCEstimate: at least two samples are needed for a standard error");
        return {mean_, std::sqrt(variance() / static_cast<double>(n_)), n_};
    }

private:
    std::size_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

/// Per-coordinate Monte-Carlo estimate of a vector-valued mean (e.g. a gradient).
struct VectorEstimate {
    Vec value;
    Vec std_error;
    std::size_t n = 0;

    std::size_t size() const { return value.size(); }
    MCEstimate coordinate(std::size_t i) const { return {value[i], std_error[i], n}; }
};

class VectorAccumulator {
public:
    explicit VectorAccumulator(std::size_t dim) : acc_(dim) {}

    void add(ConstSpan x) {
        require_same_dim(x.size(), acc_.size(), "VectorAccumulator::add");
        for (std::size_t i = 0; i < x.size(); ++i) {
            acc_[i].add(x[i]);
        }
    }

    VectorEstimate estimate() const {
        VectorEstimate out;
        out.value.resize(acc_.size());
        out.std_error.resize(acc_.size());
        out.n = acc_.empty() ? 0 : acc_.front().count();
        for (std::size_t i = 0; i < acc_.size(); ++i) {
            const auto e = acc_[i].estimate();
            out.value[i] = e.value;
            out.std_error[i] = e.std_error;
        }
        return out;
    }

private:
    std::vector<Accumulator> acc_;
};

inline MCEstimate estimate_from(ConstSpan samples) {
    Accumulator acc;
    for (double x : samples) {
        acc.add(x);
    }
    return acc.estimate();
}

/// SE of the difference of two independent estimates.
inline double combined_std_error(const MCEstimate& a, const MCEstimate& b) {
    return std::sqrt(a.std_error * a.std_error + b.std_error * b.std_error);
}

}  // namespace dsmlab
