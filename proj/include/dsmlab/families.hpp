// families.hpp
//
// Parametric conditional families p(x | c; phi) with pathwise sampling.
//
// A family turns the standardized draws of a SampleBatch into a realized
// (x, x_t, c) and reports the total derivatives of every realized quantity
// with respect to its parameters phi. The conditional p(x | c) is Gaussian
// for the pathwise families, so grad log q(x_t | c) and its derivatives are
// exact.

#pragma once

#include <cmath>
#include <concepts>
#include <string>

#include "dsmlab/analytic.hpp"
#include "dsmlab/random.hpp"
#include "dsmlab/score_models.hpp"

namespace dsmlab {

/// One realized sample and its derivatives with respect to phi (p = |phi|).
struct PathwiseDraw {
    Vec x;          // d
    Vec x_t;        // d
    Vec c;          // condition fed to the score model
    Matrix dx;      // d x p
    Matrix dx_t;    // d x p
    Matrix dc;      // dim(c) x p
    Vec cond_mean;  // mean of p(x | c), d
    Vec cond_var;   // variance of p(x | c), d
    Matrix dmean;   // d x p, total derivative along the sampling path
    Matrix dvar;    // d x p
};

template <class F>
concept ConditionalFamily = requires(const F& f, F& fm, const SampleBatch& b, std::size_t i, double s,
                                     const NoiseSchedule& sched) {
    { f.name() } -> std::convertible_to<std::string>;
    { f.dim() } -> std::convertible_to<std::size_t>;
    { f.condition_dim() } -> std::convertible_to<std::size_t>;
    { f.encoder_noise_dim() } -> std::convertible_to<std::size_t>;
    { f.params() } -> std::same_as<const Vec&>;
    { f.param_names() } -> std::same_as<std::vector<std::string>>;
    { fm.set_params(Vec{}) };
    { f.draw(b, i, s) } -> std::same_as<PathwiseDraw>;
    { f.oracle_model(sched) } -> std::same_as<LinearScoreModel>;
};

// ---------------------------------------------------------------------------

/// p(x | c) = N(mu, diag(exp(2 log_s))) with c = phi = (mu, log_s) fed to the model.
/// Also serves as the optimized source distribution p(x) = N(m, u^2) with phi = (m, log u).
class GaussianFamily {
public:
    explicit GaussianFamily(DiagGaussian dist) : dim_(dist.dim()) {
        phi_ = dist.mean();
        phi_.insert(phi_.end(), dist.log_std().begin(), dist.log_std().end());
    }

    std::string name() const { return "gaussian"; }
    std::size_t dim() const { return dim_; }
    std::size_t condition_dim() const { return 2 * dim_; }
    std::size_t encoder_noise_dim() const { return 0; }
    const Vec& params() const { return phi_; }
    void set_params(Vec phi) {
        require_same_dim(phi.size(), 2 * dim_, "GaussianFamily::set_params");
        require(all_finite(phi), "GaussianFamily: non-finite parameter");
        phi_ = std::move(phi);
    }

    std::vector<std::string> param_names() const {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < dim_; ++i) {
            out.push_back("mean[" + std::to_string(i) + "]");
        }
        for (std::size_t i = 0; i < dim_; ++i) {
            out.push_back("log_std[" + std::to_string(i) + "]");
        }
        return out;
    }

    DiagGaussian distribution() const {
        return DiagGaussian(Vec(phi_.begin(), phi_.begin() + static_cast<std::ptrdiff_t>(dim_)),
                            Vec(phi_.begin() + static_cast<std::ptrdiff_t>(dim_), phi_.end()));
    }

    PathwiseDraw draw(const SampleBatch& b, std::size_t i, double sigma) const {
        require_same_dim(b.dim, dim_, "GaussianFamily::draw batch");
        const std::size_t p = 2 * dim_;
        const auto eps = b.eps_row(i);
        const auto nu = b.nu_row(i);
        PathwiseDraw out{Vec(dim_), Vec(dim_), phi_,       Matrix(dim_, p), Matrix(dim_, p), Matrix(p, p),
                         Vec(dim_), Vec(dim_), Matrix(dim_, p), Matrix(dim_, p)};
        for (std::size_t j = 0; j < dim_; ++j) {
            const double s = std::exp(phi_[dim_ + j]);
            out.x[j] = phi_[j] + s * eps[j];
            out.x_t[j] = out.x[j] + sigma * nu[j];
            out.dx(j, j) = 1.0;
            out.dx(j, dim_ + j) = s * eps[j];
            out.cond_mean[j] = phi_[j];
            out.cond_var[j] = s * s;
            out.dmean(j, j) = 1.0;
            out.dvar(j, dim_ + j) = 2.0 * s * s;
        }
        out.dx_t = out.dx;
        for (std::size_t k = 0; k < p; ++k) {
            out.dc(k, k) = 1.0;
        }
        return out;
    }

    /// Closed-form optimal linear score of the current Gaussian at every level.
    LinearScoreModel oracle_model(const NoiseSchedule& schedule) const {
        return LinearScoreModel::optimal_for(distribution(), schedule);
    }

private:
    std::size_t dim_;
    Vec phi_;
};

// ---------------------------------------------------------------------------

/// x ~ prior, c = alpha x + beta eta per coordinate, phi = (alpha), beta fixed.
/// x | c is Gaussian with the posterior of NoisyEncoderModel.
class EncoderFamily {
public:
    explicit EncoderFamily(NoisyEncoderModel model) : model_(std::move(model)), phi_{model_.alpha()} {}

    std::string name() const { return "encoder"; }
    std::size_t dim() const { return model_.dim(); }
    std::size_t condition_dim() const { return model_.dim(); }
    std::size_t encoder_noise_dim() const { return model_.dim(); }
    const Vec& params() const { return phi_; }
    void set_params(Vec phi) {
        require_same_dim(phi.size(), 1, "EncoderFamily::set_params");
        model_ = NoisyEncoderModel(phi[0], model_.beta(), model_.prior());
        phi_ = std::move(phi);
    }
    std::vector<std::string> param_names() const { return {"alpha"}; }
    const NoisyEncoderModel& model() const { return model_; }

    PathwiseDraw draw(const SampleBatch& b, std::size_t i, double sigma) const {
        const std::size_t d = dim();
        require_same_dim(b.dim, d, "EncoderFamily::draw batch");
        require_same_dim(b.encoder_dim, d, "EncoderFamily::draw encoder noise");
        const double alpha = model_.alpha();
        const double beta2 = model_.beta() * model_.beta();
        const auto eps = b.eps_row(i);
        const auto nu = b.nu_row(i);
        const auto eta = b.eta_row(i);
        PathwiseDraw out{Vec(d), Vec(d), Vec(d), Matrix(d, 1), Matrix(d, 1), Matrix(d, 1),
                         Vec(d), Vec(d), Matrix(d, 1), Matrix(d, 1)};
        const auto& prior = model_.prior();
        for (std::size_t j = 0; j < d; ++j) {
            const double mu0 = prior.mean()[j];
            const double s0 = prior.var(j);
            out.x[j] = mu0 + prior.std(j) * eps[j];
            out.x_t[j] = out.x[j] + sigma * nu[j];
            out.c[j] = alpha * out.x[j] + model_.beta() * eta[j];
            out.dc(j, 0) = out.x[j];

            const double denom = alpha * alpha * s0 + beta2;
            const double gain = alpha * s0 / denom;
            const double dgain = s0 * (beta2 - alpha * alpha * s0) / (denom * denom);
            out.cond_mean[j] = mu0 + gain * (out.c[j] - alpha * mu0);
            out.cond_var[j] = s0 * beta2 / denom;
            // d mean / d alpha along the path: through c (dc/dalpha = x) and explicitly.
            out.dmean(j, 0) = gain * out.x[j] + dgain * (out.c[j] - alpha * mu0) - gain * mu0;
            out.dvar(j, 0) = -2.0 * alpha * s0 * s0 * beta2 / (denom * denom);
        }
        return out;
    }

    /// Linear score with condition coupling equal to the exact score of
    /// q(x_t | c): s = -(x_t - m(c)) / (V + sigma^2).
    LinearScoreModel oracle_model(const NoiseSchedule& schedule) const {
        const std::size_t d = dim();
        LinearScoreModel m(schedule, d, d);
        const double alpha = model_.alpha();
        for (std::size_t l = 0; l < schedule.size(); ++l) {
            Vec a(d), b(d), w(d);
            for (std::size_t j = 0; j < d; ++j) {
                const double v = model_.posterior_variance(j) + schedule[l] * schedule[l];
                const double gain = model_.gain(j);
                const double mu0 = model_.prior().mean()[j];
                a[j] = -1.0 / v;
                w[j] = gain / v;
                b[j] = (mu0 - gain * alpha * mu0) / v;
            }
            m.set_level(l, a, b, w);
        }
        return m;
    }

private:
    NoisyEncoderModel model_;
    Vec phi_;
};

// ---------------------------------------------------------------------------

/// Two fixed 1-D components whose weight is w = sigmoid(logit). The component
/// index is discrete, so there is no pathwise sampler; gradients for this
/// family go through quadrature instead (see experiments).
class MixtureWeightFamily {
public:
    MixtureWeightFamily(DiagGaussian first, DiagGaussian second, double logit)
        : first_(std::move(first)), second_(std::move(second)), phi_{logit} {
        require(first_.dim() == 1 && second_.dim() == 1, "MixtureWeightFamily: components must be 1-D");
    }

    std::string name() const { return "mixture-weight"; }
    std::size_t dim() const { return 1; }
    std::size_t condition_dim() const { return 1; }
    std::size_t encoder_noise_dim() const { return 0; }
    const Vec& params() const { return phi_; }
    void set_params(Vec phi) {
        require_same_dim(phi.size(), 1, "MixtureWeightFamily::set_params");
        phi_ = std::move(phi);
    }
    std::vector<std::string> param_names() const { return {"logit"}; }

    double weight() const { return 1.0 / (1.0 + std::exp(-phi_[0])); }

    GaussianMixture mixture() const {
        const double w = weight();
        return GaussianMixture({w, 1.0 - w}, {first_, second_});
    }

    const DiagGaussian& first() const { return first_; }
    const DiagGaussian& second() const { return second_; }

    PathwiseDraw draw(const SampleBatch&, std::size_t, double) const {
        throw UnsupportedError("mixture-weight family has no pathwise sampler");
    }

    LinearScoreModel oracle_model(const NoiseSchedule&) const {
        throw UnsupportedError("mixture-weight family has no linear oracle score");
    }

private:
    DiagGaussian first_;
    DiagGaussian second_;
    Vec phi_;
};

}  // namespace dsmlab
