// score_models.hpp
//
// Parametric score approximators s_theta(x_t, sigma, c) with exact
// vector-Jacobian products for parameters, the noisy input, and the
// condition input.
//
// Three families share one interface (the ScoreModel concept):
//   LinearScoreModel  per-level affine map a (.) x_t + b + w c
//   MlpScoreModel     tanh MLP over [x_t, log sigma, c]
//   ExactScoreModel   the exact marginal score of a fixed mixture (a frozen teacher)

#pragma once

#include <cmath>
#include <concepts>
#include <string>

#include "dsmlab/analytic.hpp"
#include "dsmlab/params.hpp"
#include "dsmlab/random.hpp"

namespace dsmlab {

/// Gradients of <upstream, s(x_t, sigma, c)>.
struct ModelGradients {
    Vec params;     // same flattening as the model's ParamVector
    Vec input;      // with respect to x_t
    Vec condition;  // with respect to c
};

template <class M>
concept ScoreModel = requires(const M& m, ConstSpan v, double s) {
    { m.dim() } -> std::convertible_to<std::size_t>;
    { m.condition_dim() } -> std::convertible_to<std::size_t>;
    { m.eval(v, s, v) } -> std::same_as<Vec>;
    { m.backward(v, s, v, v) } -> std::same_as<ModelGradients>;
    { m.params() } -> std::same_as<const ParamVector&>;
};

template <class M>
concept TrainableScoreModel = ScoreModel<M> && requires(M& m) {
    { m.params() } -> std::same_as<ParamVector&>;
};

// ---------------------------------------------------------------------------

struct LinearParams {
    Vec a;
    Vec b;
};

/// Parameters at which the explicit score-matching loss is exactly zero for
/// a Gaussian: a_i = -1/(s_i^2 + sigma^2), b_i = mu_i/(s_i^2 + sigma^2).
inline LinearParams optimal_linear_params(const DiagGaussian& dist, double sigma) {
    require(sigma > 0.0, "optimal_linear_params: sigma must be positive");
    LinearParams out{Vec(dist.dim()), Vec(dist.dim())};
    for (std::size_t i = 0; i < dist.dim(); ++i) {
        const double v = dist.var(i) + sigma * sigma;
        out.a[i] = -1.0 / v;
        out.b[i] = dist.mean()[i] / v;
    }
    return out;
}

/// s(x_t, sigma_l, c)_i = a_{l,i} x_t,i + b_{l,i} + w_{l,i} c_{j(i)}
///
/// One (a, b, w) triple per schedule level. The condition is either absent
/// (condition_dim 0), a shared scalar (1), or one entry per coordinate (d).
/// Layout: level0.a, level0.b, [level0.w], level1.a, ...
class LinearScoreModel {
public:
    LinearScoreModel(NoiseSchedule schedule, std::size_t dim, std::size_t condition_dim = 0)
        : schedule_(std::move(schedule)), dim_(dim), condition_dim_(condition_dim) {
        require(dim_ >= 1, "LinearScoreModel: dim must be >= 1");
        require(condition_dim_ == 0 || condition_dim_ == 1 || condition_dim_ == dim_,
                "LinearScoreModel: condition_dim must be 0, 1 or dim");
        std::vector<std::pair<std::string, std::size_t>> layout;
        for (std::size_t l = 0; l < schedule_.size(); ++l) {
            const std::string p = "level" + std::to_string(l);
            layout.emplace_back(p + ".a", dim_);
            layout.emplace_back(p + ".b", dim_);
            if (condition_dim_ > 0) {
                layout.emplace_back(p + ".w", dim_);
            }
        }
        params_ = ParamVector::zeros(layout);
    }

    std::size_t dim() const { return dim_; }
    std::size_t condition_dim() const { return condition_dim_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    const ParamVector& params() const { return params_; }
    ParamVector& params() { return params_; }

    std::size_t level_of(double sigma) const {
        auto idx = schedule_.index_of(sigma);
        if (!idx) {
            throw std::invalid_argument("LinearScoreModel: sigma " + std::to_string(sigma) +
                                        " is not a schedule level");
        }
        return *idx;
    }

    void set_level(std::size_t level, ConstSpan a, ConstSpan b, ConstSpan w = {}) {
        require(level < schedule_.size(), "LinearScoreModel::set_level: level out of range");
        require_same_dim(a.size(), dim_, "LinearScoreModel::set_level a");
        require_same_dim(b.size(), dim_, "LinearScoreModel::set_level b");
        const std::string p = "level" + std::to_string(level);
        std::copy(a.begin(), a.end(), params_.view(p + ".a").begin());
        std::copy(b.begin(), b.end(), params_.view(p + ".b").begin());
        if (condition_dim_ > 0) {
            auto wv = params_.view(p + ".w");
            if (w.empty()) {
                std::fill(wv.begin(), wv.end(), 0.0);
            } else {
                require_same_dim(w.size(), dim_, "LinearScoreModel::set_level w");
                std::copy(w.begin(), w.end(), wv.begin());
            }
        }
    }

    /// The exact-score parameters of a Gaussian at every level, with w = 0.
    static LinearScoreModel optimal_for(const DiagGaussian& dist, const NoiseSchedule& schedule,
                                        std::size_t condition_dim = 0) {
        LinearScoreModel m(schedule, dist.dim(), condition_dim);
        for (std::size_t l = 0; l < schedule.size(); ++l) {
            const auto p = optimal_linear_params(dist, schedule[l]);
            m.set_level(l, p.a, p.b);
        }
        return m;
    }

    ConstSpan a(std::size_t level) const { return params_.view("level" + std::to_string(level) + ".a"); }
    ConstSpan b(std::size_t level) const { return params_.view("level" + std::to_string(level) + ".b"); }
    ConstSpan w(std::size_t level) const {
        if (condition_dim_ == 0) {
            return {};
        }
        return params_.view("level" + std::to_string(level) + ".w");
    }

    Vec eval(ConstSpan x_t, double sigma, ConstSpan c) const {
        check_inputs(x_t, c);
        const std::size_t l = level_of(sigma);
        const auto av = a(l);
        const auto bv = b(l);
        const auto wv = w(l);
        Vec out(dim_);
        for (std::size_t i = 0; i < dim_; ++i) {
            out[i] = av[i] * x_t[i] + bv[i];
            if (condition_dim_ > 0) {
                out[i] += wv[i] * c[cond_index(i)];
            }
        }
        return out;
    }

    ModelGradients backward(ConstSpan x_t, double sigma, ConstSpan c, ConstSpan upstream) const {
        check_inputs(x_t, c);
        require_same_dim(upstream.size(), dim_, "LinearScoreModel::backward upstream");
        const std::size_t l = level_of(sigma);
        const auto av = a(l);
        const auto wv = w(l);
        ModelGradients g{Vec(params_.size(), 0.0), Vec(dim_), Vec(condition_dim_, 0.0)};
        const std::string p = "level" + std::to_string(l);
        const std::size_t off_a = params_.segment(p + ".a").offset;
        const std::size_t off_b = params_.segment(p + ".b").offset;
        for (std::size_t i = 0; i < dim_; ++i) {
            g.params[off_a + i] = upstream[i] * x_t[i];
            g.params[off_b + i] = upstream[i];
            g.input[i] = upstream[i] * av[i];
        }
        if (condition_dim_ > 0) {
            const std::size_t off_w = params_.segment(p + ".w").offset;
            for (std::size_t i = 0; i < dim_; ++i) {
                g.params[off_w + i] = upstream[i] * c[cond_index(i)];
                g.condition[cond_index(i)] += upstream[i] * wv[i];
            }
        }
        return g;
    }

private:
    std::size_t cond_index(std::size_t i) const { return condition_dim_ == 1 ? 0 : i; }

    void check_inputs(ConstSpan x_t, ConstSpan c) const {
        require_same_dim(x_t.size(), dim_, "LinearScoreModel x_t");
        require_same_dim(c.size(), condition_dim_, "LinearScoreModel condition");
    }

    NoiseSchedule schedule_;
    std::size_t dim_;
    std::size_t condition_dim_;
    ParamVector params_;
};

// ---------------------------------------------------------------------------

/// Fully connected tanh network over the input [x_t, log sigma, c].
///
/// widths = {d + 1 + dim(c), hidden..., d}; the output layer is linear.
/// Parameters are flattened layer by layer, weights (row-major, out x in)
/// before biases: layer0.weight, layer0.bias, layer1.weight, ...
class MlpScoreModel {
public:
    MlpScoreModel(std::size_t dim, std::size_t condition_dim, const std::vector<std::size_t>& hidden)
        : dim_(dim), condition_dim_(condition_dim) {
        require(dim_ >= 1, "MlpScoreModel: dim must be >= 1");
        widths_.push_back(dim_ + 1 + condition_dim_);
        for (std::size_t h : hidden) {
            require(h >= 1, "MlpScoreModel: hidden widths must be positive");
            widths_.push_back(h);
        }
        widths_.push_back(dim_);
        std::vector<std::pair<std::string, std::size_t>> layout;
        for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
            layout.emplace_back("layer" + std::to_string(l) + ".weight", widths_[l + 1] * widths_[l]);
            layout.emplace_back("layer" + std::to_string(l) + ".bias", widths_[l + 1]);
        }
        params_ = ParamVector::zeros(layout);
    }

    /// Weights and biases uniform in +-1/sqrt(fan_in), drawn in flattening order.
    MlpScoreModel(std::size_t dim, std::size_t condition_dim, const std::vector<std::size_t>& hidden, Rng& rng)
        : MlpScoreModel(dim, condition_dim, hidden) {
        for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(widths_[l]));
            for (double& v : params_.view("layer" + std::to_string(l) + ".weight")) {
                v = (2.0 * rng.uniform() - 1.0) * bound;
            }
            for (double& v : params_.view("layer" + std::to_string(l) + ".bias")) {
                v = (2.0 * rng.uniform() - 1.0) * bound;
            }
        }
    }

    /// Rebuild from explicit widths and flat values (checkpoint loading).
    static MlpScoreModel from_widths(const std::vector<std::size_t>& widths, std::size_t condition_dim, Vec values) {
        require(widths.size() >= 2, "MlpScoreModel: need input and output widths");
        const std::size_t d = widths.back();
        require(widths.front() == d + 1 + condition_dim, "MlpScoreModel: input width must be d + 1 + dim(c)");
        MlpScoreModel m(d, condition_dim, std::vector<std::size_t>(widths.begin() + 1, widths.end() - 1));
        require_same_dim(values.size(), m.params_.size(), "MlpScoreModel::from_widths values");
        m.params_.values() = std::move(values);
        return m;
    }

    std::size_t dim() const { return dim_; }
    std::size_t condition_dim() const { return condition_dim_; }
    const std::vector<std::size_t>& widths() const { return widths_; }
    std::size_t layers() const { return widths_.size() - 1; }
    const ParamVector& params() const { return params_; }
    ParamVector& params() { return params_; }

    Vec eval(ConstSpan x_t, double sigma, ConstSpan c) const {
        auto acts = forward(x_t, sigma, c);
        return std::move(acts.back());
    }

    ModelGradients backward(ConstSpan x_t, double sigma, ConstSpan c, ConstSpan upstream) const {
        require_same_dim(upstream.size(), dim_, "MlpScoreModel::backward upstream");
        const auto acts = forward(x_t, sigma, c);
        ModelGradients g{Vec(params_.size(), 0.0), {}, {}};
        Vec delta(upstream.begin(), upstream.end());  // dL/dz for the current layer
        std::size_t offset = params_.size();
        for (std::size_t l = layers(); l-- > 0;) {
            const std::size_t in = widths_[l];
            const std::size_t out = widths_[l + 1];
            offset -= out * in + out;
            const double* weight = params_.values().data() + offset;
            const Vec& a_in = acts[l];
            double* gw = g.params.data() + offset;
            double* gb = gw + out * in;
            Vec delta_in(in, 0.0);
            for (std::size_t o = 0; o < out; ++o) {
                const double d = delta[o];
                gb[o] = d;
                for (std::size_t i = 0; i < in; ++i) {
                    gw[o * in + i] = d * a_in[i];
                    delta_in[i] += weight[o * in + i] * d;
                }
            }
            if (l > 0) {
                for (std::size_t i = 0; i < in; ++i) {
                    delta_in[i] *= 1.0 - a_in[i] * a_in[i];  // tanh'
                }
            }
            delta = std::move(delta_in);
        }
        g.input.assign(delta.begin(), delta.begin() + static_cast<std::ptrdiff_t>(dim_));
        g.condition.assign(delta.begin() + static_cast<std::ptrdiff_t>(dim_ + 1), delta.end());
        return g;
    }

private:
    /// Activations per layer: acts[0] is the input, acts.back() the output.
    std::vector<Vec> forward(ConstSpan x_t, double sigma, ConstSpan c) const {
        require_same_dim(x_t.size(), dim_, "MlpScoreModel x_t");
        require_same_dim(c.size(), condition_dim_, "MlpScoreModel condition");
        require(sigma > 0.0, "MlpScoreModel: sigma must be positive");
        std::vector<Vec> acts;
        acts.reserve(widths_.size());
        Vec input;
        input.reserve(widths_[0]);
        input.insert(input.end(), x_t.begin(), x_t.end());
        input.push_back(std::log(sigma));
        input.insert(input.end(), c.begin(), c.end());
        acts.push_back(std::move(input));
        std::size_t offset = 0;
        for (std::size_t l = 0; l < layers(); ++l) {
            const std::size_t in = widths_[l];
            const std::size_t out = widths_[l + 1];
            const double* weight = params_.values().data() + offset;
            const double* bias = weight + out * in;
            const Vec& a_in = acts[l];
            Vec z(out);
            for (std::size_t o = 0; o < out; ++o) {
                double acc = bias[o];
                for (std::size_t i = 0; i < in; ++i) {
                    acc += weight[o * in + i] * a_in[i];
                }
                z[o] = l + 1 < layers() ? std::tanh(acc) : acc;
            }
            acts.push_back(std::move(z));
            offset += out * in + out;
        }
        return acts;
    }

    std::size_t dim_;
    std::size_t condition_dim_;
    std::vector<std::size_t> widths_;
    ParamVector params_;
};

// ---------------------------------------------------------------------------

/// The exact noised-marginal score of a fixed mixture, usable wherever a
/// frozen pre-trained model is expected. Has no parameters.
class ExactScoreModel {
public:
    explicit ExactScoreModel(GaussianMixture dist) : dist_(std::move(dist)) {}

    std::size_t dim() const { return dist_.dim(); }
    std::size_t condition_dim() const { return 0; }
    const GaussianMixture& distribution() const { return dist_; }
    const ParamVector& params() const { return params_; }
    ParamVector& params() { return params_; }

    Vec eval(ConstSpan x_t, double sigma, ConstSpan c) const {
        require(c.empty(), "ExactScoreModel: takes no condition");
        return marginal_score(dist_, x_t, sigma);
    }

    ModelGradients backward(ConstSpan x_t, double sigma, ConstSpan c, ConstSpan upstream) const {
        require(c.empty(), "ExactScoreModel: takes no condition");
        const Matrix h = marginal_score_jacobian(dist_, x_t, sigma);
        return {{}, vjp(upstream, h), {}};
    }

private:
    GaussianMixture dist_;
    ParamVector params_;
};

// ---------------------------------------------------------------------------

template <ScoreModel M>
ParamVector grad_params(const M& model, ConstSpan x_t, double sigma, ConstSpan c, ConstSpan upstream) {
    return model.params().with_values(model.backward(x_t, sigma, c, upstream).params);
}

template <ScoreModel M>
Vec grad_condition(const M& model, ConstSpan x_t, double sigma, ConstSpan c, ConstSpan upstream) {
    return model.backward(x_t, sigma, c, upstream).condition;
}

template <ScoreModel M>
Vec grad_input(const M& model, ConstSpan x_t, double sigma, ConstSpan c, ConstSpan upstream) {
    return model.backward(x_t, sigma, c, upstream).input;
}

// ---------------------------------------------------------------------------

struct GradientProbe {
    Vec x_t;
    double sigma = 1.0;
    Vec c;
    Vec upstream;
};

struct FdReport {
    double max_rel_error = 0.0;
    std::string worst;  // coordinate with the largest error
    bool passed = false;
};

/// Compares backward() against central differences of <upstream, eval()> over
/// every parameter and every condition coordinate. The error for one
/// coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
template <TrainableScoreModel M>
FdReport fd_gradient_check(const M& model, const GradientProbe& probe, double tolerance, double step = 1e-5) {
    require(tolerance > 0.0, "fd_gradient_check: tolerance must be positive");
    const auto analytic = model.backward(probe.x_t, probe.sigma, probe.c, probe.upstream);
    FdReport report;
    auto consider = [&](double a, double f, const std::string& name) {
        const double err = std::abs(a - f) / std::max({1.0, std::abs(a), std::abs(f)});
        if (err > report.max_rel_error || report.worst.empty()) {
            report.max_rel_error = std::max(report.max_rel_error, err);
            report.worst = name;
        }
    };
    auto objective = [&](const M& m, ConstSpan c) { return dot(probe.upstream, m.eval(probe.x_t, probe.sigma, c)); };

    M work = model;
    const auto names = model.params().coordinate_names();
    for (std::size_t i = 0; i < work.params().size(); ++i) {
        const double orig = work.params()[i];
        work.params()[i] = orig + step;
        const double up = objective(work, probe.c);
        work.params()[i] = orig - step;
        const double down = objective(work, probe.c);
        work.params()[i] = orig;
        consider(analytic.params[i], (up - down) / (2.0 * step), names[i]);
    }
    Vec c = probe.c;
    for (std::size_t j = 0; j < c.size(); ++j) {
        const double orig = c[j];
        c[j] = orig + step;
        const double up = objective(model, c);
        c[j] = orig - step;
        const double down = objective(model, c);
        c[j] = orig;
        consider(analytic.condition[j], (up - down) / (2.0 * step), "condition[" + std::to_string(j) + "]");
    }
    report.passed = report.max_rel_error <= tolerance;
    return report;
}

}  // namespace dsmlab
