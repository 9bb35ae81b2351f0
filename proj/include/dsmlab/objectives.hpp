// objectives.hpp
//
// Estimators for the score-matching losses and the terms that relate them:
//
//   DSM = E[1/2 |s(x_t) - grad log q(x_t | x)|^2]
//   ESM = E[1/2 |s(x_t) - grad log q(x_t | c)|^2]
//   C2  = E[1/2 |grad log q(x_t | c)|^2]
//   C3  = E[1/2 |grad log q(x_t | x)|^2] = d / (2 sigma^2)
//   DSM - ESM + C2 - C3 = 0
//
// All losses carry the 1/2 factor. Every estimator consumes a SampleBatch in
// its fixed draw order, so calls on the same batch share common random
// numbers and paired differences are estimated per sample.
//
// Gradients are pathwise: x = mu + s * eps and x_t = x + sigma * nu are
// differentiated through, never the density.

#pragma once

#include <cmath>

#include "dsmlab/analytic.hpp"
#include "dsmlab/estimate.hpp"
#include "dsmlab/families.hpp"
#include "dsmlab/random.hpp"
#include "dsmlab/score_models.hpp"

namespace dsmlab {

enum class Objective { dsm, esm, c2, c3 };

inline const char* to_string(Objective o) {
    switch (o) {
        case Objective::dsm: return "dsm";
        case Objective::esm: return "esm";
        case Objective::c2: return "c2";
        case Objective::c3: return "c3";
    }
    return "?";
}

/// Linear combination of the four terms.
struct TermWeights {
    double dsm = 0.0;
    double esm = 0.0;
    double c2 = 0.0;
    double c3 = 0.0;

    static TermWeights of(Objective o) {
        switch (o) {
            case Objective::dsm: return {1, 0, 0, 0};
            case Objective::esm: return {0, 1, 0, 0};
            case Objective::c2: return {0, 0, 1, 0};
            case Objective::c3: return {0, 0, 0, 1};
        }
        return {};
    }

    /// DSM - ESM + C2 - C3, zero in expectation.
    static TermWeights residual() { return {1, -1, 1, -1}; }
};

/// All terms on one batch, each with its own standard error.
struct TermEstimates {
    MCEstimate dsm;
    MCEstimate esm;
    MCEstimate c2;
    MCEstimate c3;
    MCEstimate cross_marginal;     // E[s^T grad log q(x_t | c)]
    MCEstimate cross_conditional;  // E[s^T grad log q(x_t | x)]
    MCEstimate residual;           // per-sample DSM - ESM + C2 - C3
};

namespace detail {

inline void check_batch(const SampleBatch& batch, std::size_t dim, const char* where) {
    if (batch.n < 2) {
        throw std::invalid_argument(std::string(where) + ": batch needs at least two samples");
    }
    require_same_dim(batch.dim, dim, where);
}

/// Condition passed to the model: empty when the model ignores conditions.
template <ScoreModel M>
ConstSpan model_condition(const M& model, ConstSpan c) {
    if (model.condition_dim() == 0) {
        return {};
    }
    require_same_dim(model.condition_dim(), c.size(), "model condition");
    return c;
}

struct PointValues {
    Vec x;
    Vec x_t;
    Vec s;       // model output
    Vec t_cond;  // grad log q(x_t | x)
    Vec t_marg;  // grad log q(x_t | c)
};

template <ScoreModel M>
PointValues unconditional_point(const M& model, const GaussianMixture& dist, double sigma, const SampleBatch& batch,
                                std::size_t i, ConstSpan c) {
    PointValues p;
    p.x = dist.sample(batch.component_u[i], batch.eps_row(i));
    p.x_t = perturb(p.x, sigma, batch.nu_row(i));
    p.s = model.eval(p.x_t, sigma, model_condition(model, c));
    p.t_cond = conditional_score(p.x_t, p.x, sigma);
    p.t_marg = marginal_score(dist, p.x_t, sigma);
    return p;
}

inline double half_sq_diff(ConstSpan a, ConstSpan b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double r = a[i] - b[i];
        acc += r * r;
    }
    return 0.5 * acc;
}

inline double combine(const TermWeights& w, double dsm, double esm, double c2, double c3) {
    return w.dsm * dsm + w.esm * esm + w.c2 * c2 + w.c3 * c3;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Losses and terms for a fixed source distribution and a fixed condition.

template <ScoreModel M>
TermEstimates evaluate_terms(const M& model, const GaussianMixture& dist, double sigma, const SampleBatch& batch,
                             ConstSpan c = {}) {
    detail::check_batch(batch, dist.dim(), "evaluate_terms");
    require_same_dim(model.dim(), dist.dim(), "evaluate_terms model");
    Accumulator dsm, esm, c2, c3, xm, xc, res;
    for (std::size_t i = 0; i < batch.n; ++i) {
        const auto p = detail::unconditional_point(model, dist, sigma, batch, i, c);
        const double d = detail::half_sq_diff(p.s, p.t_cond);
        const double e = detail::half_sq_diff(p.s, p.t_marg);
        const double k2 = 0.5 * squared_norm(p.t_marg);
        const double k3 = 0.5 * squared_norm(p.t_cond);
        dsm.add(d);
        esm.add(e);
        c2.add(k2);
        c3.add(k3);
        xm.add(dot(p.s, p.t_marg));
        xc.add(dot(p.s, p.t_cond));
        res.add(d - e + k2 - k3);
    }
    return {dsm.estimate(), esm.estimate(), c2.estimate(), c3.estimate(),
            xm.estimate(),  xc.estimate(),  res.estimate()};
}

template <ScoreModel M>
MCEstimate dsm_loss(const M& model, const GaussianMixture& dist, double sigma, const SampleBatch& batch,
                    ConstSpan c = {}) {
    detail::check_batch(batch, dist.dim(), "dsm_loss");
    Accumulator acc;
    for (std::size_t i = 0; i < batch.n; ++i) {
        const Vec x = dist.sample(batch.component_u[i], batch.eps_row(i));
        const Vec x_t = perturb(x, sigma, batch.nu_row(i));
        const Vec s = model.eval(x_t, sigma, detail::model_condition(model, c));
        acc.add(detail::half_sq_diff(s, conditional_score(x_t, x, sigma)));
    }
    return acc.estimate();
}

template <ScoreModel M>
MCEstimate esm_loss(const M& model, const GaussianMixture& dist, double sigma, const SampleBatch& batch,
                    ConstSpan c = {}) {
    detail::check_batch(batch, dist.dim(), "esm_loss");
    Accumulator acc;
    for (std::size_t i = 0; i < batch.n; ++i) {
        const Vec x = dist.sample(batch.component_u[i], batch.eps_row(i));
        const Vec x_t = perturb(x, sigma, batch.nu_row(i));
        const Vec s = model.eval(x_t, sigma, detail::model_condition(model, c));
        acc.add(detail::half_sq_diff(s, marginal_score(dist, x_t, sigma)));
    }
    return acc.estimate();
}

inline MCEstimate c2_term(const GaussianMixture& dist, double sigma, const SampleBatch& batch) {
    detail::check_batch(batch, dist.dim(), "c2_term");
    Accumulator acc;
    for (std::size_t i = 0; i < batch.n; ++i) {
        const Vec x = dist.sample(batch.component_u[i], batch.eps_row(i));
        const Vec x_t = perturb(x, sigma, batch.nu_row(i));
        acc.add(0.5 * squared_norm(marginal_score(dist, x_t, sigma)));
    }
    return acc.estimate();
}

/// Uses only the forward noise draws: the integrand does not depend on x.
inline MCEstimate c3_term(std::size_t d, double sigma, const SampleBatch& batch) {
    detail::check_batch(batch, d, "c3_term");
    Accumulator acc;
    const Vec origin(d, 0.0);
    for (std::size_t i = 0; i < batch.n; ++i) {
        const Vec x_t = perturb(origin, sigma, batch.nu_row(i));
        acc.add(0.5 * squared_norm(conditional_score(x_t, origin, sigma)));
    }
    return acc.estimate();
}

template <ScoreModel M>
MCEstimate cross_term_marginal(const M& model, const GaussianMixture& dist, double sigma, const SampleBatch& batch,
                               ConstSpan c = {}) {
    return evaluate_terms(model, dist, sigma, batch, c).cross_marginal;
}

template <ScoreModel M>
MCEstimate cross_term_conditional(const M& model, const GaussianMixture& dist, double sigma,
                                  const SampleBatch& batch, ConstSpan c = {}) {
    return evaluate_terms(model, dist, sigma, batch, c).cross_conditional;
}

/// Paired estimate of cross_marginal - cross_conditional (zero in expectation).
template <ScoreModel M>
MCEstimate cross_term_difference(const M& model, const GaussianMixture& dist, double sigma,
                                 const SampleBatch& batch, ConstSpan c = {}) {
    detail::check_batch(batch, dist.dim(), "cross_term_difference");
    Accumulator acc;
    for (std::size_t i = 0; i < batch.n; ++i) {
        const auto p = detail::unconditional_point(model, dist, sigma, batch, i, c);
        Vec diff(p.t_marg.size());
        for (std::size_t j = 0; j < diff.size(); ++j) {
            diff[j] = p.t_marg[j] - p.t_cond[j];
        }
        acc.add(dot(p.s, diff));
    }
    return acc.estimate();
}

template <ScoreModel M>
MCEstimate decomposition_residual(const M& model, const GaussianMixture& dist, double sigma,
                                  const SampleBatch& batch, ConstSpan c = {}) {
    return evaluate_terms(model, dist, sigma, batch, c).residual;
}

/// Per-sample estimate of sum_k w_k * term_k.
template <ScoreModel M>
MCEstimate loss_combination(const TermWeights& w, const M& model, const GaussianMixture& dist, double sigma,
                            const SampleBatch& batch, ConstSpan c = {}) {
    detail::check_batch(batch, dist.dim(), "loss_combination");
    Accumulator acc;
    for (std::size_t i = 0; i < batch.n; ++i) {
        const auto p = detail::unconditional_point(model, dist, sigma, batch, i, c);
        acc.add(detail::combine(w, detail::half_sq_diff(p.s, p.t_cond), detail::half_sq_diff(p.s, p.t_marg),
                                0.5 * squared_norm(p.t_marg), 0.5 * squared_norm(p.t_cond)));
    }
    return acc.estimate();
}

// ---------------------------------------------------------------------------
// Parameter gradients.

/// Per-coordinate estimate of grad_theta of sum_k w_k * term_k. C2 and C3
/// contribute nothing: neither depends on theta.
template <ScoreModel M>
VectorEstimate grad_theta_estimate(const TermWeights& w, const M& model, const GaussianMixture& dist, double sigma,
                                   const SampleBatch& batch, ConstSpan c = {}) {
    detail::check_batch(batch, dist.dim(), "grad_theta");
    VectorAccumulator acc(model.params().size());
    Vec upstream(dist.dim());
    for (std::size_t i = 0; i < batch.n; ++i) {
        const auto p = detail::unconditional_point(model, dist, sigma, batch, i, c);
        for (std::size_t j = 0; j < upstream.size(); ++j) {
            upstream[j] = w.dsm * (p.s[j] - p.t_cond[j]) + w.esm * (p.s[j] - p.t_marg[j]);
        }
        acc.add(model.backward(p.x_t, sigma, detail::model_condition(model, c), upstream).params);
    }
    return acc.estimate();
}

struct TermsAndGradient {
    TermEstimates terms;
    Vec grad;  // mean theta-gradient, no per-coordinate standard errors
};

/// Every term and the theta-gradient of sum_k w_k * term_k in a single pass.
template <ScoreModel M>
TermsAndGradient terms_and_grad_theta(const TermWeights& w, const M& model, const GaussianMixture& dist,
                                      double sigma, const SampleBatch& batch, ConstSpan c = {}) {
    detail::check_batch(batch, dist.dim(), "terms_and_grad_theta");
    Accumulator dsm, esm, c2, c3, xm, xc, res;
    Vec grad(model.params().size(), 0.0);
    Vec upstream(dist.dim());
    for (std::size_t i = 0; i < batch.n; ++i) {
        const auto p = detail::unconditional_point(model, dist, sigma, batch, i, c);
        const double d = detail::half_sq_diff(p.s, p.t_cond);
        const double e = detail::half_sq_diff(p.s, p.t_marg);
        const double k2 = 0.5 * squared_norm(p.t_marg);
        const double k3 = 0.5 * squared_norm(p.t_cond);
        dsm.add(d);
        esm.add(e);
        c2.add(k2);
        c3.add(k3);
        xm.add(dot(p.s, p.t_marg));
        xc.add(dot(p.s, p.t_cond));
        res.add(d - e + k2 - k3);
        for (std::size_t j = 0; j < upstream.size(); ++j) {
            upstream[j] = w.dsm * (p.s[j] - p.t_cond[j]) + w.esm * (p.s[j] - p.t_marg[j]);
        }
        const Vec g = model.backward(p.x_t, sigma, detail::model_condition(model, c), upstream).params;
        for (std::size_t k = 0; k < grad.size(); ++k) {
            grad[k] += g[k];
        }
    }
    const double inv_n = 1.0 / static_cast<double>(batch.n);
    for (double& g : grad) {
        g *= inv_n;
    }
    return {{dsm.estimate(), esm.estimate(), c2.estimate(), c3.estimate(), xm.estimate(), xc.estimate(),
             res.estimate()},
            std::move(grad)};
}

template <ScoreModel M>
ParamVector grad_theta(Objective objective, const M& model, const GaussianMixture& dist, double sigma,
                       const SampleBatch& batch, ConstSpan c = {}) {
    return model.params().with_values(
        grad_theta_estimate(TermWeights::of(objective), model, dist, sigma, batch, c).value);
}

// ---------------------------------------------------------------------------
// Condition / distribution-parameter gradients through a conditional family.

namespace detail {

struct FamilyPoint {
    PathwiseDraw draw;
    Vec s;
    Vec t_cond;
    Vec t_marg;
    Matrix dt_cond;  // d x p
    Matrix dt_marg;  // d x p
};

template <ScoreModel M, ConditionalFamily F>
FamilyPoint family_point(const M& model, const F& family, double sigma, const SampleBatch& batch, std::size_t i) {
    FamilyPoint fp{family.draw(batch, i, sigma), {}, {}, {}, {}, {}};
    const auto& dr = fp.draw;
    const std::size_t d = dr.x.size();
    const std::size_t p = dr.dx.cols;
    fp.s = model.eval(dr.x_t, sigma, model_condition(model, dr.c));
    fp.t_cond = conditional_score(dr.x_t, dr.x, sigma);
    fp.t_marg.resize(d);
    fp.dt_cond = Matrix(d, p);
    fp.dt_marg = Matrix(d, p);
    const double inv_s2 = 1.0 / (sigma * sigma);
    for (std::size_t j = 0; j < d; ++j) {
        const double v = dr.cond_var[j] + sigma * sigma;
        const double r = dr.x_t[j] - dr.cond_mean[j];
        fp.t_marg[j] = -r / v;
        for (std::size_t k = 0; k < p; ++k) {
            fp.dt_cond(j, k) = -(dr.dx_t(j, k) - dr.dx(j, k)) * inv_s2;
            fp.dt_marg(j, k) = -(dr.dx_t(j, k) - dr.dmean(j, k)) / v + r / (v * v) * dr.dvar(j, k);
        }
    }
    return fp;
}

}  // namespace detail

/// Per-coordinate estimate of the total derivative of sum_k w_k * term_k with
/// respect to the family parameters phi. The score model is held fixed;
/// gradients flow through x, x_t and the condition fed to it.
template <ScoreModel M, ConditionalFamily F>
VectorEstimate grad_condition_total_estimate(const TermWeights& w, const M& model, const F& family, double sigma,
                                             const SampleBatch& batch) {
    detail::check_batch(batch, family.dim(), "grad_condition_total");
    require_same_dim(model.dim(), family.dim(), "grad_condition_total model");
    const std::size_t p = family.params().size();
    VectorAccumulator acc(p);
    const std::size_t d = family.dim();
    Vec upstream(d), r_dsm(d), r_esm(d);
    for (std::size_t i = 0; i < batch.n; ++i) {
        const auto fp = detail::family_point(model, family, sigma, batch, i);
        for (std::size_t j = 0; j < d; ++j) {
            r_dsm[j] = fp.s[j] - fp.t_cond[j];
            r_esm[j] = fp.s[j] - fp.t_marg[j];
            upstream[j] = w.dsm * r_dsm[j] + w.esm * r_esm[j];
        }
        Vec g(p, 0.0);
        if (w.dsm != 0.0 || w.esm != 0.0) {
            const ConstSpan cm = detail::model_condition(model, fp.draw.c);
            const auto mg = model.backward(fp.draw.x_t, sigma, cm, upstream);
            const Vec via_input = vjp(mg.input, fp.draw.dx_t);
            for (std::size_t k = 0; k < p; ++k) {
                g[k] += via_input[k];
            }
            if (!cm.empty()) {
                const Vec via_cond = vjp(mg.condition, fp.draw.dc);
                for (std::size_t k = 0; k < p; ++k) {
                    g[k] += via_cond[k];
                }
            }
        }
        const Vec dsm_target = vjp(r_dsm, fp.dt_cond);
        const Vec esm_target = vjp(r_esm, fp.dt_marg);
        const Vec c2_part = vjp(fp.t_marg, fp.dt_marg);
        const Vec c3_part = vjp(fp.t_cond, fp.dt_cond);
        for (std::size_t k = 0; k < p; ++k) {
            g[k] += -w.dsm * dsm_target[k] - w.esm * esm_target[k] + w.c2 * c2_part[k] + w.c3 * c3_part[k];
        }
        acc.add(g);
    }
    return acc.estimate();
}

template <ScoreModel M, ConditionalFamily F>
VectorEstimate grad_condition_total(Objective objective, const M& model, const F& family, double sigma,
                                    const SampleBatch& batch) {
    return grad_condition_total_estimate(TermWeights::of(objective), model, family, sigma, batch);
}

/// Gradient with respect to (m, log u) of p(x) = N(m, u^2) under a frozen model.
template <ScoreModel M>
VectorEstimate grad_distribution(Objective objective, const M& frozen_model, const DiagGaussian& p,
                                 double sigma, const SampleBatch& batch) {
    return grad_condition_total(objective, frozen_model, GaussianFamily(p), sigma, batch);
}

/// All terms under the family's current parameters.
template <ScoreModel M, ConditionalFamily F>
TermEstimates family_terms(const M& model, const F& family, double sigma, const SampleBatch& batch) {
    detail::check_batch(batch, family.dim(), "family_terms");
    Accumulator dsm, esm, c2, c3, xm, xc, res;
    for (std::size_t i = 0; i < batch.n; ++i) {
        const auto fp = detail::family_point(model, family, sigma, batch, i);
        const double dv = detail::half_sq_diff(fp.s, fp.t_cond);
        const double ev = detail::half_sq_diff(fp.s, fp.t_marg);
        const double k2 = 0.5 * squared_norm(fp.t_marg);
        const double k3 = 0.5 * squared_norm(fp.t_cond);
        dsm.add(dv);
        esm.add(ev);
        c2.add(k2);
        c3.add(k3);
        xm.add(dot(fp.s, fp.t_marg));
        xc.add(dot(fp.s, fp.t_cond));
        res.add(dv - ev + k2 - k3);
    }
    return {dsm.estimate(), esm.estimate(), c2.estimate(), c3.estimate(),
            xm.estimate(),  xc.estimate(),  res.estimate()};
}

/// grad_theta of the objective with data drawn from the family (joint regime).
template <ScoreModel M, ConditionalFamily F>
VectorEstimate family_grad_theta_estimate(const TermWeights& w, const M& model, const F& family, double sigma,
                                          const SampleBatch& batch) {
    detail::check_batch(batch, family.dim(), "family_grad_theta");
    VectorAccumulator acc(model.params().size());
    Vec upstream(family.dim());
    for (std::size_t i = 0; i < batch.n; ++i) {
        const auto fp = detail::family_point(model, family, sigma, batch, i);
        for (std::size_t j = 0; j < upstream.size(); ++j) {
            upstream[j] = w.dsm * (fp.s[j] - fp.t_cond[j]) + w.esm * (fp.s[j] - fp.t_marg[j]);
        }
        acc.add(model.backward(fp.draw.x_t, sigma, detail::model_condition(model, fp.draw.c), upstream).params);
    }
    return acc.estimate();
}

/// Average of the C2 estimates over all schedule levels, per sample, using the
/// same base draws at every level.
inline MCEstimate score_norm_metric(const GaussianMixture& dist, const NoiseSchedule& schedule,
                                    const SampleBatch& batch) {
    detail::check_batch(batch, dist.dim(), "score_norm_metric");
    Accumulator acc;
    const double inv_levels = 1.0 / static_cast<double>(schedule.size());
    for (std::size_t i = 0; i < batch.n; ++i) {
        const Vec x = dist.sample(batch.component_u[i], batch.eps_row(i));
        double total = 0.0;
        for (double sigma : schedule.sigmas()) {
            total += 0.5 * squared_norm(marginal_score(dist, perturb(x, sigma, batch.nu_row(i)), sigma));
        }
        acc.add(total * inv_levels);
    }
    return acc.estimate();
}

template <ConditionalFamily F>
MCEstimate score_norm_metric(const F& family, const NoiseSchedule& schedule, const SampleBatch& batch) {
    detail::check_batch(batch, family.dim(), "score_norm_metric");
    Accumulator acc;
    const double inv_levels = 1.0 / static_cast<double>(schedule.size());
    for (std::size_t i = 0; i < batch.n; ++i) {
        double total = 0.0;
        for (double sigma : schedule.sigmas()) {
            const auto dr = family.draw(batch, i, sigma);
            for (std::size_t j = 0; j < dr.x.size(); ++j) {
                const double t = -(dr.x_t[j] - dr.cond_mean[j]) / (dr.cond_var[j] + sigma * sigma);
                total += 0.5 * t * t;
            }
        }
        acc.add(total * inv_levels);
    }
    return acc.estimate();
}

// ---------------------------------------------------------------------------
// Closed forms for a linear model on a diagonal Gaussian.

struct LinearClosedForm {
    double dsm = 0.0;
    double esm = 0.0;
    double c2 = 0.0;
    double c3 = 0.0;
    double residual() const { return dsm - esm + c2 - c3; }
};

namespace detail {

/// b + w c, the effective offset at a fixed condition.
inline Vec effective_offset(const LinearScoreModel& m, std::size_t level, ConstSpan c) {
    Vec b(m.b(level).begin(), m.b(level).end());
    if (m.condition_dim() > 0) {
        require_same_dim(c.size(), m.condition_dim(), "linear closed form condition");
        const auto w = m.w(level);
        for (std::size_t i = 0; i < b.size(); ++i) {
            b[i] += w[i] * c[m.condition_dim() == 1 ? 0 : i];
        }
    }
    return b;
}

}  // namespace detail

/// DSM = 1/2 sum_i [(a mu + b)^2 + a^2 s^2 + (a sigma + 1/sigma)^2]
/// ESM = 1/2 sum_i [(a mu + b)^2 + (a + 1/v)^2 v],  v = s^2 + sigma^2
inline LinearClosedForm linear_closed_form(const LinearScoreModel& model, const DiagGaussian& dist, double sigma,
                                           ConstSpan c = {}) {
    require_same_dim(model.dim(), dist.dim(), "linear_closed_form");
    const std::size_t l = model.level_of(sigma);
    const auto a = model.a(l);
    const Vec b = detail::effective_offset(model, l, c);
    LinearClosedForm out;
    for (std::size_t i = 0; i < dist.dim(); ++i) {
        const double mu = dist.mean()[i];
        const double s2 = dist.var(i);
        const double v = s2 + sigma * sigma;
        const double bias = a[i] * mu + b[i];
        const double noise = a[i] * sigma + 1.0 / sigma;
        out.dsm += 0.5 * (bias * bias + a[i] * a[i] * s2 + noise * noise);
        const double slope = a[i] + 1.0 / v;
        out.esm += 0.5 * (bias * bias + slope * slope * v);
    }
    out.c2 = c2_closed_form(dist, sigma);
    out.c3 = c3_closed_form(dist.dim(), sigma);
    return out;
}

/// Exact gradient of the DSM or ESM closed form over the model parameters.
inline Vec linear_closed_form_gradient(Objective objective, const LinearScoreModel& model, const DiagGaussian& dist,
                                       double sigma, ConstSpan c = {}) {
    require(objective == Objective::dsm || objective == Objective::esm,
            "linear_closed_form_gradient: objective must be dsm or esm");
    const std::size_t l = model.level_of(sigma);
    const auto a = model.a(l);
    const Vec b = detail::effective_offset(model, l, c);
    const std::string p = "level" + std::to_string(l);
    Vec g(model.params().size(), 0.0);
    const std::size_t off_a = model.params().segment(p + ".a").offset;
    const std::size_t off_b = model.params().segment(p + ".b").offset;
    for (std::size_t i = 0; i < dist.dim(); ++i) {
        const double mu = dist.mean()[i];
        const double s2 = dist.var(i);
        const double v = s2 + sigma * sigma;
        const double bias = a[i] * mu + b[i];
        double ga = bias * mu;
        if (objective == Objective::dsm) {
            ga += a[i] * s2 + (a[i] * sigma + 1.0 / sigma) * sigma;
        } else {
            ga += (a[i] + 1.0 / v) * v;
        }
        g[off_a + i] = ga;
        g[off_b + i] = bias;
        if (model.condition_dim() > 0) {
            g[model.params().segment(p + ".w").offset + i] = bias * c[model.condition_dim() == 1 ? 0 : i];
        }
    }
    return g;
}

}  // namespace dsmlab
