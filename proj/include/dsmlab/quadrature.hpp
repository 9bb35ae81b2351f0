// quadrature.hpp
//
// Deterministic one-dimensional expectations under Gaussian mixtures, used
// as oracles next to the Monte-Carlo estimators.
//
// Each component contributes E[f(mu + s z)], z ~ N(0, 1). Small rules
// (<= 128 nodes) are Gauss-Hermite and exact for polynomials of degree
// 2n - 1. Larger rules are composite 8-point Gauss-Legendre panels over
// z in [-12, 12] weighted by the normal density: the score of a
// well-separated mixture switches sign over a narrow band between modes,
// which a Hermite rule centred on one component under-resolves.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

#include "dsmlab/analytic.hpp"

namespace dsmlab {

/// Gauss-Legendre nodes and weights on [-1, 1].
class GaussLegendre {
public:
    explicit GaussLegendre(std::size_t n) : nodes_(n), weights_(n) {
        require(n >= 1, "GaussLegendre: need at least one node");
        const double nd = static_cast<double>(n);
        for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
            double z = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (nd + 0.5));
            double dp = 0.0;
            for (int iter = 0; iter < 100; ++iter) {
                double p1 = 1.0;
                double p2 = 0.0;
                for (std::size_t j = 1; j <= n; ++j) {
                    const double p3 = p2;
                    p2 = p1;
                    const double jd = static_cast<double>(j);
                    p1 = ((2.0 * jd - 1.0) * z * p2 - (jd - 1.0) * p3) / jd;
                }
                dp = nd * (z * p1 - p2) / (z * z - 1.0);
                const double prev = z;
                z = prev - p1 / dp;
                if (std::abs(z - prev) <= 1e-16) {
                    break;
                }
            }
            nodes_[i] = -z;
            nodes_[n - 1 - i] = z;
            weights_[i] = 2.0 / ((1.0 - z * z) * dp * dp);
            weights_[n - 1 - i] = weights_[i];
        }
    }

    const Vec& nodes() const { return nodes_; }
    const Vec& weights() const { return weights_; }

private:
    Vec nodes_;
    Vec weights_;
};

/// Nodes and weights for int exp(-x^2) f(x) dx, found by Newton iteration on
/// the orthonormal Hermite recurrence. Stable up to a few hundred nodes.
class GaussHermite {
public:
    static constexpr std::size_t max_nodes = 128;

    explicit GaussHermite(std::size_t n) : nodes_(n), weights_(n) {
        require(n >= 1 && n <= max_nodes, "GaussHermite: node count out of range");
        constexpr double pim4 = 0.7511255444649425;  // pi^(-1/4)
        const std::size_t half = (n + 1) / 2;
        const double nd = static_cast<double>(n);
        double z = 0.0;
        for (std::size_t i = 0; i < half; ++i) {
            if (i == 0) {
                z = std::sqrt(2.0 * nd + 1.0) - 1.85575 * std::pow(2.0 * nd + 1.0, -0.16667);
            } else if (i == 1) {
                z -= 1.14 * std::pow(nd, 0.426) / z;
            } else if (i == 2) {
                z = 1.86 * z - 0.86 * nodes_[0];
            } else if (i == 3) {
                z = 1.91 * z - 0.91 * nodes_[1];
            } else {
                z = 2.0 * z - nodes_[i - 2];
            }
            double pp = 0.0;
            for (int iter = 0; iter < 100; ++iter) {
                double p1 = pim4;
                double p2 = 0.0;
                for (std::size_t j = 1; j <= n; ++j) {
                    const double p3 = p2;
                    p2 = p1;
                    const double jd = static_cast<double>(j);
                    p1 = z * std::sqrt(2.0 / jd) * p2 - std::sqrt((jd - 1.0) / jd) * p3;
                }
                pp = std::sqrt(2.0 * nd) * p2;
                const double prev = z;
                z = prev - p1 / pp;
                if (std::abs(z - prev) <= 1e-15 * std::max(1.0, std::abs(z))) {
                    break;
                }
            }
            nodes_[i] = z;
            nodes_[n - 1 - i] = -z;
            weights_[i] = 2.0 / (pp * pp);
            weights_[n - 1 - i] = weights_[i];
        }
    }

    const Vec& nodes() const { return nodes_; }
    const Vec& weights() const { return weights_; }

private:
    Vec nodes_;
    Vec weights_;
};

/// Fixed rule for E[f(Z)], Z ~ N(0, 1): Gauss-Hermite up to 128 nodes,
/// otherwise `nodes` points in 8-point Gauss-Legendre panels over [-12, 12].
class NormalQuadrature {
public:
    static constexpr double half_width = 12.0;
    static constexpr std::size_t panel_order = 8;

    explicit NormalQuadrature(std::size_t nodes) {
        require(nodes >= 16, "quadrature: nodes must be >= 16");
        if (nodes <= GaussHermite::max_nodes) {
            const GaussHermite gh(nodes);
            for (std::size_t i = 0; i < nodes; ++i) {
                points_.push_back(std::numbers::sqrt2 * gh.nodes()[i]);
                weights_.push_back(gh.weights()[i] * std::numbers::inv_sqrtpi);
            }
            return;
        }
        const std::size_t panels = (nodes + panel_order - 1) / panel_order;
        const GaussLegendre gl(panel_order);
        const double width = 2.0 * half_width / static_cast<double>(panels);
        const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
        for (std::size_t p = 0; p < panels; ++p) {
            const double lo = -half_width + width * static_cast<double>(p);
            for (std::size_t i = 0; i < panel_order; ++i) {
                const double z = lo + 0.5 * width * (gl.nodes()[i] + 1.0);
                points_.push_back(z);
                weights_.push_back(0.5 * width * gl.weights()[i] * inv_sqrt_2pi * std::exp(-0.5 * z * z));
            }
        }
    }

    std::size_t size() const { return points_.size(); }
    const Vec& points() const { return points_; }
    const Vec& weights() const { return weights_; }

    /// E[f(X)] for X ~ N(mean, std^2).
    template <class F>
    double normal_expectation(F&& f, double mean, double std) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < points_.size(); ++i) {
            acc += weights_[i] * f(mean + std * points_[i]);
        }
        return acc;
    }

    /// E[f(X)] for X drawn from a one-dimensional mixture.
    template <class F>
    double mixture_expectation(F&& f, const GaussianMixture& dist) const {
        if (dist.dim() != 1) {
            throw UnsupportedError("quadrature: only one-dimensional distributions are supported");
        }
        double acc = 0.0;
        for (std::size_t k = 0; k < dist.size(); ++k) {
            const double w = dist.weights()[k];
            if (w == 0.0) {
                continue;
            }
            const auto& c = dist.component(k);
            acc += w * normal_expectation(f, c.mean()[0], c.std(0));
        }
        return acc;
    }

private:
    Vec points_;
    Vec weights_;
};

inline constexpr std::size_t kDefaultQuadratureNodes = 2048;

/// Deterministic E_dist[f(x)] for a one-dimensional mixture.
inline double quadrature_expectation(const std::function<double(double)>& f, const GaussianMixture& dist,
                                     std::size_t nodes = kDefaultQuadratureNodes) {
    require(nodes >= 16, "quadrature_expectation: nodes must be >= 16");
    if (dist.dim() != 1) {
        throw UnsupportedError("quadrature_expectation: only one-dimensional distributions are supported");
    }
    return NormalQuadrature(nodes).mixture_expectation(f, dist);
}

/// C2 = E_{q_t}[1/2 |score|^2] for a 1-D mixture, integrated over the noised marginal.
inline double c2_quadrature(const GaussianMixture& dist, double sigma, const NormalQuadrature& rule) {
    const GaussianMixture noisy = dist.noised(sigma);
    return rule.mixture_expectation(
        [&](double x) {
            const double s = marginal_score(dist, ConstSpan(&x, 1), sigma)[0];
            return 0.5 * s * s;
        },
        noisy);
}

}  // namespace dsmlab
