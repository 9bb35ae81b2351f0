// analytic.hpp
//
// Exact densities and scores for the variance-exploding forward process
// x_t = x + sigma_t * nu, nu ~ N(0, I), applied to diagonal Gaussians and
// Gaussian mixtures. The noised marginal of a mixture is again a mixture,
// sum_k w_k N(mu_k, diag(s_k^2) + sigma_t^2 I), so its score is exact.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <utility>

#include "dsmlab/core.hpp"

namespace dsmlab {

class NoiseSchedule {
public:
    NoiseSchedule() = default;

    explicit NoiseSchedule(Vec sigmas) : sigmas_(std::move(sigmas)) {
        require(!sigmas_.empty(), "NoiseSchedule: empty");
        for (std::size_t i = 0; i < sigmas_.size(); ++i) {
            require(std::isfinite(sigmas_[i]) && sigmas_[i] > 0.0, "NoiseSchedule: sigma must be positive");
            if (i > 0) {
                require(sigmas_[i] > sigmas_[i - 1], "NoiseSchedule: sigmas must be strictly increasing");
            }
        }
    }

    const Vec& sigmas() const { return sigmas_; }
    std::size_t size() const { return sigmas_.size(); }
    double operator[](std::size_t i) const { return sigmas_[i]; }

    /// Index of the level equal to sigma (relative tolerance 1e-12).
    std::optional<std::size_t> index_of(double sigma) const {
        for (std::size_t i = 0; i < sigmas_.size(); ++i) {
            if (std::abs(sigmas_[i] - sigma) <= 1e-12 * sigmas_[i]) {
                return i;
            }
        }
        return std::nullopt;
    }

private:
    Vec sigmas_;
};

/// Diagonal Gaussian parameterized by mean and log standard deviation.
class DiagGaussian {
public:
    DiagGaussian(Vec mean, Vec log_std) : mean_(std::move(mean)), log_std_(std::move(log_std)) {
        require(!mean_.empty(), "DiagGaussian: dimension must be >= 1");
        require_same_dim(mean_.size(), log_std_.size(), "DiagGaussian");
        require(all_finite(mean_) && all_finite(log_std_), "DiagGaussian: non-finite parameter");
    }

    static DiagGaussian from_std(Vec mean, const Vec& std) {
        Vec log_std(std.size());
        for (std::size_t i = 0; i < std.size(); ++i) {
            require(std[i] > 0.0, "DiagGaussian: standard deviation must be positive");
            log_std[i] = std::log(std[i]);
        }
        return DiagGaussian(std::move(mean), std::move(log_std));
    }

    static DiagGaussian isotropic(std::size_t d, double mean, double std) {
        return from_std(Vec(d, mean), Vec(d, std));
    }

    std::size_t dim() const { return mean_.size(); }
    const Vec& mean() const { return mean_; }
    const Vec& log_std() const { return log_std_; }
    double std(std::size_t i) const { return std::exp(log_std_[i]); }
    double var(std::size_t i) const { return std::exp(2.0 * log_std_[i]); }

    /// The same Gaussian convolved with N(0, sigma^2 I).
    DiagGaussian noised(double sigma) const {
        Vec ls(dim());
        for (std::size_t i = 0; i < dim(); ++i) {
            ls[i] = 0.5 * std::log(var(i) + sigma * sigma);
        }
        return DiagGaussian(mean_, std::move(ls));
    }

private:
    Vec mean_;
    Vec log_std_;
};

class GaussianMixture {
public:
    GaussianMixture(Vec weights, std::vector<DiagGaussian> components)
        : weights_(std::move(weights)), components_(std::move(components)) {
        require(!components_.empty(), "GaussianMixture: no components");
        require_same_dim(weights_.size(), components_.size(), "GaussianMixture weights");
        double total = 0.0;
        for (double w : weights_) {
            require(std::isfinite(w) && w >= 0.0, "GaussianMixture: negative weight");
            total += w;
        }
        require(std::abs(total - 1.0) <= 1e-12, "GaussianMixture: weights must sum to 1");
        for (const auto& c : components_) {
            require_same_dim(c.dim(), components_.front().dim(), "GaussianMixture components");
        }
    }

    // NOLINTNEXTLINE(google-explicit-constructor): a Gaussian is a one-component mixture
    GaussianMixture(const DiagGaussian& g) : GaussianMixture(Vec{1.0}, {g}) {}

    /// Equal-weight, equal-scale mixture with one component per mean.
    static GaussianMixture symmetric(const std::vector<Vec>& means, double std) {
        std::vector<DiagGaussian> comps;
        for (const auto& m : means) {
            comps.push_back(DiagGaussian::from_std(m, Vec(m.size(), std)));
        }
        return GaussianMixture(Vec(means.size(), 1.0 / static_cast<double>(means.size())), std::move(comps));
    }

    std::size_t dim() const { return components_.front().dim(); }
    std::size_t size() const { return components_.size(); }
    const Vec& weights() const { return weights_; }
    const std::vector<DiagGaussian>& components() const { return components_; }
    const DiagGaussian& component(std::size_t k) const { return components_[k]; }

    GaussianMixture noised(double sigma) const {
        std::vector<DiagGaussian> comps;
        comps.reserve(size());
        for (const auto& c : components_) {
            comps.push_back(c.noised(sigma));
        }
        return GaussianMixture(weights_, std::move(comps));
    }

    /// Component selected by a uniform draw (inverse CDF over the weights).
    std::size_t select(double u) const {
        double acc = 0.0;
        for (std::size_t k = 0; k + 1 < size(); ++k) {
            acc += weights_[k];
            if (u < acc && weights_[k] > 0.0) {
                return k;
            }
        }
        std::size_t k = size() - 1;
        while (k > 0 && weights_[k] == 0.0) {
            --k;
        }
        return k;
    }

    /// Reparameterized draw x = mu_k + s_k * eps with k = select(u).
    Vec sample(double u, ConstSpan eps) const {
        require_same_dim(eps.size(), dim(), "GaussianMixture::sample");
        const auto& c = components_[select(u)];
        Vec x(dim());
        for (std::size_t i = 0; i < dim(); ++i) {
            x[i] = c.mean()[i] + c.std(i) * eps[i];
        }
        return x;
    }

private:
    Vec weights_;
    std::vector<DiagGaussian> components_;
};

/// Desk-scale conditioning model: c = alpha * x + beta * eta, eta ~ N(0, I),
/// applied per coordinate to x ~ prior. x given c is an exact Gaussian.
class NoisyEncoderModel {
public:
    NoisyEncoderModel(double alpha, double beta, DiagGaussian prior)
        : alpha_(alpha), beta_(beta), prior_(std::move(prior)) {
        require(std::isfinite(alpha_), "NoisyEncoderModel: alpha must be finite");
        require(std::isfinite(beta_) && beta_ > 0.0, "NoisyEncoderModel: beta must be positive");
    }

    double alpha() const { return alpha_; }
    double beta() const { return beta_; }
    const DiagGaussian& prior() const { return prior_; }
    std::size_t dim() const { return prior_.dim(); }

    /// Kalman gain k_i = alpha s0_i^2 / (alpha^2 s0_i^2 + beta^2).
    double gain(std::size_t i) const {
        const double s0 = prior_.var(i);
        return alpha_ * s0 / (alpha_ * alpha_ * s0 + beta_ * beta_);
    }

    double posterior_variance(std::size_t i) const {
        const double s0 = prior_.var(i);
        return s0 * beta_ * beta_ / (alpha_ * alpha_ * s0 + beta_ * beta_);
    }

    double posterior_mean(std::size_t i, double c) const {
        const double mu0 = prior_.mean()[i];
        return mu0 + gain(i) * (c - alpha_ * mu0);
    }

    DiagGaussian posterior(ConstSpan c) const {
        require_same_dim(c.size(), dim(), "NoisyEncoderModel::posterior");
        Vec mean(dim());
        Vec log_std(dim());
        for (std::size_t i = 0; i < dim(); ++i) {
            mean[i] = posterior_mean(i, c[i]);
            log_std[i] = 0.5 * std::log(posterior_variance(i));
        }
        return DiagGaussian(std::move(mean), std::move(log_std));
    }

private:
    double alpha_;
    double beta_;
    DiagGaussian prior_;
};

struct PosteriorMoments {
    double mean;
    double variance;
};

/// Exact moments of x | c for a one-dimensional encoder model.
inline PosteriorMoments posterior_moments(const NoisyEncoderModel& model, double c) {
    if (model.dim() != 1) {
        throw UnsupportedError("posterior_moments: scalar form needs a one-dimensional prior");
    }
    return {model.posterior_mean(0, c), model.posterior_variance(0)};
}

inline Vec perturb(ConstSpan x, double sigma, ConstSpan noise) {
    require_same_dim(x.size(), noise.size(), "perturb");
    require(sigma > 0.0, "perturb: sigma must be positive");
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] + sigma * noise[i];
    }
    return out;
}

/// grad_{x_t} log q(x_t | x) = -(x_t - x) / sigma^2.
inline Vec conditional_score(ConstSpan x_t, ConstSpan x, double sigma) {
    require_same_dim(x_t.size(), x.size(), "conditional_score");
    require(sigma > 0.0, "conditional_score: sigma must be positive");
    const double inv = 1.0 / (sigma * sigma);
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = -(x_t[i] - x[i]) * inv;
    }
    return out;
}

namespace detail {

inline double log_normal_diag(ConstSpan x, const DiagGaussian& g, double sigma2) {
    constexpr double log_2pi = 1.8378770664093454835606594728112;
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = g.var(i) + sigma2;
        const double r = x[i] - g.mean()[i];
        acc += -0.5 * (log_2pi + std::log(v) + r * r / v);
    }
    return acc;
}

/// Per-component log of w_k N(x_t; mu_k, s_k^2 + sigma^2) and the resulting
/// posterior responsibilities, stabilized by subtracting the max.
struct Responsibilities {
    Vec log_terms;
    Vec r;
    double log_total;
};

inline Responsibilities responsibilities(const GaussianMixture& dist, ConstSpan x_t, double sigma) {
    require_same_dim(x_t.size(), dist.dim(), "marginal density");
    require(std::isfinite(sigma) && sigma >= 0.0, "marginal density: sigma must be non-negative");
    const double sigma2 = sigma * sigma;
    Responsibilities out;
    out.log_terms.resize(dist.size());
    double max_term = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < dist.size(); ++k) {
        const double w = dist.weights()[k];
        out.log_terms[k] = w > 0.0 ? std::log(w) + log_normal_diag(x_t, dist.component(k), sigma2)
                                   : -std::numeric_limits<double>::infinity();
        max_term = std::max(max_term, out.log_terms[k]);
    }
    out.r.resize(dist.size());
    double total = 0.0;
    for (std::size_t k = 0; k < dist.size(); ++k) {
        out.r[k] = std::exp(out.log_terms[k] - max_term);
        total += out.r[k];
    }
    for (double& r : out.r) {
        r /= total;
    }
    out.log_total = max_term + std::log(total);
    return out;
}

}  // namespace detail

inline double marginal_log_density(const GaussianMixture& dist, ConstSpan x_t, double sigma) {
    return detail::responsibilities(dist, x_t, sigma).log_total;
}

/// grad_{x_t} log q(x_t) for the noised mixture: sum_k r_k(x_t) * g_k(x_t)
/// with g_k = -(x_t - mu_k) / (s_k^2 + sigma^2).
inline Vec marginal_score(const GaussianMixture& dist, ConstSpan x_t, double sigma) {
    const auto resp = detail::responsibilities(dist, x_t, sigma);
    const double sigma2 = sigma * sigma;
    Vec out(dist.dim(), 0.0);
    for (std::size_t k = 0; k < dist.size(); ++k) {
        if (resp.r[k] == 0.0) {
            continue;
        }
        const auto& c = dist.component(k);
        for (std::size_t i = 0; i < dist.dim(); ++i) {
            out[i] += resp.r[k] * (-(x_t[i] - c.mean()[i]) / (c.var(i) + sigma2));
        }
    }
    return out;
}

/// Hessian of log q(x_t), i.e. the Jacobian of marginal_score (symmetric):
/// sum_k r_k (g_k g_k^T - diag(1/v_k)) - s s^T.
inline Matrix marginal_score_jacobian(const GaussianMixture& dist, ConstSpan x_t, double sigma) {
    const auto resp = detail::responsibilities(dist, x_t, sigma);
    const std::size_t d = dist.dim();
    const double sigma2 = sigma * sigma;
    Matrix h(d, d);
    Vec s(d, 0.0);
    Vec g(d);
    for (std::size_t k = 0; k < dist.size(); ++k) {
        if (resp.r[k] == 0.0) {
            continue;
        }
        const auto& c = dist.component(k);
        for (std::size_t i = 0; i < d; ++i) {
            g[i] = -(x_t[i] - c.mean()[i]) / (c.var(i) + sigma2);
            s[i] += resp.r[k] * g[i];
        }
        for (std::size_t i = 0; i < d; ++i) {
            h(i, i) -= resp.r[k] / (c.var(i) + sigma2);
            for (std::size_t j = 0; j < d; ++j) {
                h(i, j) += resp.r[k] * g[i] * g[j];
            }
        }
    }
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            h(i, j) -= s[i] * s[j];
        }
    }
    return h;
}

/// E[1/2 |grad log q(x_t|c)|^2] when p(x|c) is Gaussian: sum_i 1 / (2 (s_i^2 + sigma^2)).
inline double c2_closed_form(const DiagGaussian& dist, double sigma) {
    require(sigma > 0.0, "c2_closed_form: sigma must be positive");
    double acc = 0.0;
    for (std::size_t i = 0; i < dist.dim(); ++i) {
        acc += 0.5 / (dist.var(i) + sigma * sigma);
    }
    return acc;
}

/// E[1/2 |grad log q(x_t|x)|^2] = d / (2 sigma^2); free of x, c and theta.
inline double c3_closed_form(std::size_t d, double sigma) {
    require(d >= 1, "c3_closed_form: d must be >= 1");
    require(sigma > 0.0, "c3_closed_form: sigma must be positive");
    return static_cast<double>(d) / (2.0 * sigma * sigma);
}

}  // namespace dsmlab
