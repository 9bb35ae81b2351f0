// optimization.hpp
//
// First-order training loops for the three regimes:
//   fit_theta              score-model parameters on a fixed distribution
//   optimize_condition     family parameters phi, with theta either trained
//                          alongside (joint) or reset to its closed-form
//                          optimum every step (theta-oracle)
//   optimize_distribution  (m, log u) of p(x) = N(m, u^2) under a frozen model
//
// Every step draws one noise level uniformly from the schedule and one fresh
// batch, both from the run stream Rng(config.seed, 1). The score-norm metric
// is measured on one batch per run, seeded from Rng(config.seed, 2), so
// consecutive steps are compared on common random numbers. A loss above
// 1e6 or any non-finite value aborts with DivergenceError.

#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>

#include "json.hpp"

#include "dsmlab/objectives.hpp"

namespace dsmlab {

enum class Method { plain, adam };

inline const char* to_string(Method m) { return m == Method::plain ? "plain" : "adam"; }

inline Method parse_method(const std::string& s) {
    if (s == "plain") {
        return Method::plain;
    }
    if (s == "adam") {
        return Method::adam;
    }
    throw std::invalid_argument("unknown optimizer method '" + s + "' (expected plain or adam)");
}

struct OptimizerConfig {
    Method method = Method::adam;
    double step_size = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t steps = 2000;
    std::size_t batch = 1024;
    std::uint64_t seed = 0;
    double ema_decay = 0.0;  // fit_theta returns exponentially averaged weights when > 0

    void validate() const {
        require(step_size > 0.0 && std::isfinite(step_size), "optimizer: step_size must be positive");
        require(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0,
                "optimizer: decay rates must lie in (0, 1)");
        require(epsilon > 0.0, "optimizer: epsilon must be positive");
        require(batch >= 2, "optimizer: batch must be >= 2");
        require(ema_decay >= 0.0 && ema_decay < 1.0, "optimizer: ema_decay must lie in [0, 1)");
    }
};

/// Plain gradient descent or Adam with bias correction.
class Optimizer {
public:
    Optimizer(const OptimizerConfig& config, std::size_t size) : config_(config), m_(size, 0.0), v_(size, 0.0) {
        config_.validate();
    }

    void step(std::span<double> params, ConstSpan grad) {
        require_same_dim(params.size(), m_.size(), "Optimizer::step params");
        require_same_dim(grad.size(), m_.size(), "Optimizer::step grad");
        ++t_;
        if (config_.method == Method::plain) {
            for (std::size_t i = 0; i < params.size(); ++i) {
                params[i] -= config_.step_size * grad[i];
            }
            return;
        }
        const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grad[i];
            v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
            params[i] -= config_.step_size * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + config_.epsilon);
        }
    }

private:
    OptimizerConfig config_;
    Vec m_;
    Vec v_;
    std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------

/// One row per step, describing the parameters the step started from.
struct TraceRecord {
    std::size_t step = 0;
    double sigma = 0.0;
    MCEstimate dsm;
    MCEstimate esm;
    MCEstimate c2;
    double c3 = 0.0;
    MCEstimate score_norm;
    double grad_norm = 0.0;
    Vec params;
};

struct TrainTrace {
    std::vector<std::string> param_names;
    std::vector<TraceRecord> records;

    static inline const std::vector<std::string> fixed_columns = {
        "step", "sigma", "dsm", "dsm_se", "esm", "esm_se", "c2", "c2_se", "c3", "score_norm", "score_norm_se",
        "grad_norm"};

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }

    std::vector<std::string> columns() const {
        auto cols = fixed_columns;
        cols.insert(cols.end(), param_names.begin(), param_names.end());
        return cols;
    }

    void write_csv(std::ostream& os) const {
        const auto cols = columns();
        for (std::size_t i = 0; i < cols.size(); ++i) {
            os << (i ? "," : "") << cols[i];
        }
        os << "\n";
        char buf[32];
        auto real = [&](double v) -> const char* {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            return buf;
        };
        for (const auto& r : records) {
            os << r.step << ',' << real(r.sigma);
            for (double v : {r.dsm.value, r.dsm.std_error, r.esm.value, r.esm.std_error, r.c2.value, r.c2.std_error,
                             r.c3, r.score_norm.value, r.score_norm.std_error, r.grad_norm}) {
                os << ',' << real(v);
            }
            for (double v : r.params) {
                os << ',' << real(v);
            }
            os << "\n";
        }
    }

    /// Mean of the score-norm metric over records [begin, end). Every step
    /// measures the metric on the same batch, so the estimates are fully
    /// correlated and the window SE is the mean per-step SE.
    MCEstimate score_norm_window(std::size_t begin, std::size_t end) const {
        require(begin < end && end <= records.size(), "score_norm_window: bad range");
        double sum = 0.0, se = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            sum += records[i].score_norm.value;
            se += records[i].score_norm.std_error;
        }
        const double k = static_cast<double>(end - begin);
        return {sum / k, se / k, records[begin].score_norm.n};
    }

    nlohmann::json summary() const {
        nlohmann::json j;
        j["steps"] = records.size();
        j["param_names"] = param_names;
        if (records.empty()) {
            return j;
        }
        const auto& first = records.front();
        const auto& last = records.back();
        j["initial_params"] = first.params;
        j["last_params"] = last.params;
        j["score_norm_first"] = first.score_norm.value;
        j["score_norm_last"] = last.score_norm.value;
        j["dsm_first"] = first.dsm.value;
        j["dsm_last"] = last.dsm.value;
        j["esm_first"] = first.esm.value;
        j["esm_last"] = last.esm.value;
        return j;
    }
};

namespace detail {

constexpr double kDivergenceLimit = 1e6;

inline void guard(const char* loop, std::size_t step, const char* what, double value) {
    if (!std::isfinite(value) || std::abs(value) > kDivergenceLimit) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s diverged at step %zu: %s = %.6g (limit %.0e)", loop, step, what, value,
                      kDivergenceLimit);
        throw DivergenceError(buf);
    }
}

inline void guard_params(const char* loop, std::size_t step, ConstSpan p) {
    if (!all_finite(p)) {
        throw DivergenceError(std::string(loop) + " diverged at step " + std::to_string(step) +
                              ": non-finite parameter");
    }
}

/// Noise level and batch seed for one step.
struct StepDraw {
    double sigma;
    std::uint64_t batch_seed;
};

inline SampleBatch metric_batch(const OptimizerConfig& config, std::size_t dim, std::size_t encoder_dim) {
    return SampleBatch(Rng(config.seed, 2).next_u64(), config.batch, dim, encoder_dim);
}

inline StepDraw next_step(Rng& rng, const NoiseSchedule& schedule) {
    const double sigma = schedule[rng.index(schedule.size())];
    return {sigma, rng.next_u64()};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Theta-only training.

enum class GradientMode { monte_carlo, closed_form };

template <TrainableScoreModel M>
struct FitResult {
    M model;
    TrainTrace trace;
};

/// Trains theta on `objective` (dsm or esm). Both losses are recorded every
/// step regardless of which one drives the update. closed_form mode is
/// available for a linear model on a single Gaussian: losses and gradients
/// are then exact and carry zero standard error. With ema_decay > 0 the
/// returned model holds the running average of the iterates; the trace
/// follows the raw iterates.
template <TrainableScoreModel M>
FitResult<M> fit_theta(Objective objective, M model, const GaussianMixture& dist, const NoiseSchedule& schedule,
                       const OptimizerConfig& config, GradientMode mode = GradientMode::monte_carlo) {
    require(objective == Objective::dsm || objective == Objective::esm, "fit_theta: objective must be dsm or esm");
    config.validate();
    require_same_dim(model.dim(), dist.dim(), "fit_theta model");
    std::optional<DiagGaussian> gaussian;
    if (mode == GradientMode::closed_form) {
        if constexpr (!std::same_as<M, LinearScoreModel>) {
            throw UnsupportedError("fit_theta: closed-form gradients need a linear score model");
        }
        if (dist.size() != 1) {
            throw UnsupportedError("fit_theta: closed-form gradients need a single Gaussian");
        }
        gaussian = dist.component(0);
    }

    FitResult<M> out{std::move(model), {{"theta_norm"}, {}}};
    Optimizer opt(config, out.model.params().size());
    Vec average = out.model.params().values();
    Rng rng(config.seed, 1);
    const auto metric_batch = detail::metric_batch(config, dist.dim(), 0);
    const MCEstimate metric = score_norm_metric(dist, schedule, metric_batch);
    for (std::size_t step = 0; step < config.steps; ++step) {
        const auto sd = detail::next_step(rng, schedule);
        TraceRecord rec;
        rec.step = step;
        rec.sigma = sd.sigma;
        rec.score_norm = metric;
        rec.params = {norm(out.model.params().values())};
        Vec grad;
        if (gaussian) {
            if constexpr (std::same_as<M, LinearScoreModel>) {
                const auto cf = linear_closed_form(out.model, *gaussian, sd.sigma);
                rec.dsm = {cf.dsm, 0.0, 0};
                rec.esm = {cf.esm, 0.0, 0};
                rec.c2 = {cf.c2, 0.0, 0};
                rec.c3 = cf.c3;
                grad = linear_closed_form_gradient(objective, out.model, *gaussian, sd.sigma);
            }
        } else {
            const SampleBatch batch(sd.batch_seed, config.batch, dist.dim());
            auto tg = terms_and_grad_theta(TermWeights::of(objective), out.model, dist, sd.sigma, batch);
            rec.dsm = tg.terms.dsm;
            rec.esm = tg.terms.esm;
            rec.c2 = tg.terms.c2;
            rec.c3 = c3_closed_form(dist.dim(), sd.sigma);
            grad = std::move(tg.grad);
        }
        detail::guard("fit_theta", step, to_string(objective),
                      objective == Objective::dsm ? rec.dsm.value : rec.esm.value);
        rec.grad_norm = norm(grad);
        out.trace.records.push_back(std::move(rec));
        opt.step(out.model.params().values(), grad);
        detail::guard_params("fit_theta", step, out.model.params().values());
        const auto& now = out.model.params().values();
        for (std::size_t i = 0; i < average.size(); ++i) {
            average[i] = config.ema_decay * average[i] + (1.0 - config.ema_decay) * now[i];
        }
    }
    if (config.ema_decay > 0.0) {
        out.model.params().values() = std::move(average);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Condition optimization.

enum class Regime { joint, theta_oracle };

inline const char* to_string(Regime r) { return r == Regime::joint ? "joint" : "theta-oracle"; }

template <ScoreModel M, ConditionalFamily F>
struct ConditionResult {
    M model;
    F family;
    TrainTrace trace;
};

/// Minimizes `objective` (dsm or esm) over the family parameters phi.
///
/// theta-oracle: before every step the model is replaced by
/// family.oracle_model(schedule), the exact score of q(x_t | c) for the
/// current phi, so only the bias term can move phi under DSM.
/// joint: one theta step, then one phi step on the same batch.
template <ScoreModel M, ConditionalFamily F>
ConditionResult<M, F> optimize_condition(M model, F family, const NoiseSchedule& schedule,
                                         const OptimizerConfig& config, Regime regime,
                                         Objective objective = Objective::dsm) {
    require(objective == Objective::dsm || objective == Objective::esm,
            "optimize_condition: objective must be dsm or esm");
    config.validate();
    require_same_dim(model.dim(), family.dim(), "optimize_condition model");
    if (regime == Regime::theta_oracle) {
        if constexpr (!std::same_as<M, LinearScoreModel>) {
            throw UnsupportedError("optimize_condition: the theta-oracle regime uses the linear oracle model");
        }
    }
    if constexpr (!TrainableScoreModel<M>) {
        if (regime == Regime::joint) {
            throw UnsupportedError("optimize_condition: the joint regime needs a trainable model");
        }
    }

    ConditionResult<M, F> out{std::move(model), std::move(family), {}};
    out.trace.param_names = out.family.param_names();
    const TermWeights weights = TermWeights::of(objective);
    Optimizer phi_opt(config, out.family.params().size());
    Optimizer theta_opt(config, out.model.params().size());
    Rng rng(config.seed, 1);
    const auto metric_batch = detail::metric_batch(config, out.family.dim(), out.family.encoder_noise_dim());
    for (std::size_t step = 0; step < config.steps; ++step) {
        const auto sd = detail::next_step(rng, schedule);
        const SampleBatch batch(sd.batch_seed, config.batch, out.family.dim(), out.family.encoder_noise_dim());
        if (regime == Regime::theta_oracle) {
            if constexpr (std::same_as<M, LinearScoreModel>) {
                out.model = out.family.oracle_model(schedule);
            }
        } else if constexpr (TrainableScoreModel<M>) {
            const auto g = family_grad_theta_estimate(weights, out.model, out.family, sd.sigma, batch).value;
            theta_opt.step(out.model.params().values(), g);
            detail::guard_params("optimize_condition", step, out.model.params().values());
        }
        const auto terms = family_terms(out.model, out.family, sd.sigma, batch);
        TraceRecord rec;
        rec.step = step;
        rec.sigma = sd.sigma;
        rec.dsm = terms.dsm;
        rec.esm = terms.esm;
        rec.c2 = terms.c2;
        rec.c3 = c3_closed_form(out.family.dim(), sd.sigma);
        rec.score_norm = score_norm_metric(out.family, schedule, metric_batch);
        rec.params = out.family.params();
        detail::guard("optimize_condition", step, to_string(objective),
                      objective == Objective::dsm ? rec.dsm.value : rec.esm.value);
        const Vec grad = grad_condition_total_estimate(weights, out.model, out.family, sd.sigma, batch).value;
        rec.grad_norm = norm(grad);
        out.trace.records.push_back(std::move(rec));
        Vec phi = out.family.params();
        phi_opt.step(phi, grad);
        detail::guard_params("optimize_condition", step, phi);
        out.family.set_params(std::move(phi));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Distribution optimization.

struct DistributionResult {
    DiagGaussian p;
    TrainTrace trace;
};

/// Minimizes `objective` (dsm or esm) over (m, log u) of p(x) = N(m, u^2)
/// with the model frozen. The trace's score_norm column is the C2 analogue
/// E[1/2 |grad log q_t(x_t)|^2] under the current p.
template <ScoreModel M>
DistributionResult optimize_distribution(const M& frozen_model, const DiagGaussian& p_init,
                                         const NoiseSchedule& schedule, const OptimizerConfig& config,
                                         Objective objective = Objective::dsm) {
    require(objective == Objective::dsm || objective == Objective::esm,
            "optimize_distribution: objective must be dsm or esm");
    require(frozen_model.condition_dim() == 0, "optimize_distribution: the frozen model takes no condition");
    require_same_dim(frozen_model.dim(), p_init.dim(), "optimize_distribution model");
    config.validate();
    GaussianFamily family(p_init);
    TrainTrace trace{family.param_names(), {}};
    const TermWeights weights = TermWeights::of(objective);
    Optimizer opt(config, family.params().size());
    Rng rng(config.seed, 1);
    const auto metric_batch = detail::metric_batch(config, family.dim(), 0);
    for (std::size_t step = 0; step < config.steps; ++step) {
        const auto sd = detail::next_step(rng, schedule);
        const SampleBatch batch(sd.batch_seed, config.batch, family.dim());
        const auto terms = family_terms(frozen_model, family, sd.sigma, batch);
        TraceRecord rec;
        rec.step = step;
        rec.sigma = sd.sigma;
        rec.dsm = terms.dsm;
        rec.esm = terms.esm;
        rec.c2 = terms.c2;
        rec.c3 = c3_closed_form(family.dim(), sd.sigma);
        rec.score_norm = score_norm_metric(family, schedule, metric_batch);
        rec.params = family.params();
        detail::guard("optimize_distribution", step, to_string(objective),
                      objective == Objective::dsm ? rec.dsm.value : rec.esm.value);
        const Vec grad = grad_condition_total_estimate(weights, frozen_model, family, sd.sigma, batch).value;
        rec.grad_norm = norm(grad);
        trace.records.push_back(std::move(rec));
        Vec phi = family.params();
        opt.step(phi, grad);
        detail::guard_params("optimize_distribution", step, phi);
        family.set_params(std::move(phi));
    }
    return {family.distribution(), std::move(trace)};
}

}  // namespace dsmlab
