// oracles.hpp
//
// Test-only reference computations that share no code path with the library:
// adaptive quadrature from Boost, brute-force Monte Carlo with its own
// generator, and central finite differences.

#pragma once

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

inline double normal_pdf(double x, double mean, double var) {
    const double r = x - mean;
    return std::exp(-0.5 * r * r / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

/// Adaptive Gauss-Kronrod over the whole real line.
inline double integrate(const std::function<double(double)>& f) {
    double err = 0.0;
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        f, -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(), 25, 1e-14, &err);
}

/// Adaptive quadrature on a finite interval.
inline double integrate(const std::function<double(double)>& f, double lo, double hi) {
    double err = 0.0;
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, lo, hi, 25, 1e-14, &err);
}

struct Mix1D {
    std::vector<double> w, mu, s;

    double pdf(double x, double sigma2 = 0.0) const {
        double acc = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) {
            acc += w[k] * normal_pdf(x, mu[k], s[k] * s[k] + sigma2);
        }
        return acc;
    }

    /// Score of the noised density, by direct differentiation of the sum.
    double score(double x, double sigma2) const {
        double num = 0.0;
        double den = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double v = s[k] * s[k] + sigma2;
            const double p = w[k] * normal_pdf(x, mu[k], v);
            num += p * (-(x - mu[k]) / v);
            den += p;
        }
        return num / den;
    }

    /// E[f(x)] by adaptive quadrature around each component.
    double expect(const std::function<double(double)>& f, double sigma2 = 0.0) const {
        double acc = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double v = s[k] * s[k] + sigma2;
            const double sd = std::sqrt(v);
            acc += w[k] * integrate(
                                [&](double x) {
                                    const double p = normal_pdf(x, mu[k], v);
                                    return p == 0.0 ? 0.0 : f(x) * p;
                                },
                                mu[k] - 30 * sd,
                                    mu[k] + 30 * sd);
        }
        return acc;
    }
};

struct McResult {
    double mean;
    double se;
};

/// Brute-force mean of f over n calls, each given its own generator.
template <class F>
McResult monte_carlo(std::size_t n, unsigned seed, F&& draw) {
    std::mt19937 gen(seed);
    double mean = 0.0;
    double m2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = draw(gen);
        const double delta = v - mean;
        mean += delta / static_cast<double>(i + 1);
        m2 += delta * (v - mean);
    }
    return {mean, std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n))};
}

inline double central_difference(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace oracle
