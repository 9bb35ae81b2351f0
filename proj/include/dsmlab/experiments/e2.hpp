// experiments/e2.hpp
//
// E2: optimizing the condition with DSM follows grad ESM - grad C2, so it
// climbs the score norm C2. Three families: a Gaussian N(mu, s^2) whose
// parameters are the condition, the noisy encoder c = alpha x + beta eta,
// and a two-component mixture whose weight logit is the condition.

#pragma once

#include <sstream>

#include "dsmlab/experiments/common.hpp"

namespace dsmlab {

// ---------------------------------------------------------------------------
// Mixture-weight family: gradients by quadrature.

namespace detail {

/// D_k = E_{x ~ component k}[1/2 |s(x_t) + nu / sigma|^2]
///     = E_{x_t ~ N(mu_k, s_k^2 + sigma^2)}[1/2 s^2 + s'] + 1 / (2 sigma^2)
/// for the frozen score s of `current`.
inline double component_dsm(const GaussianMixture& current, const DiagGaussian& component, double sigma,
                            const NormalQuadrature& rule) {
    const double spread = std::sqrt(component.var(0) + sigma * sigma);
    const double stein = rule.normal_expectation(
        [&](double x) {
            const ConstSpan xs(&x, 1);
            const double s = marginal_score(current, xs, sigma)[0];
            return 0.5 * s * s + marginal_score_jacobian(current, xs, sigma)(0, 0);
        },
        component.mean()[0], spread);
    return stein + 0.5 / (sigma * sigma);
}

}  // namespace detail

struct MixtureWeightGradient {
    double dsm = 0.0;   // loss at the oracle score
    double grad = 0.0;  // d DSM / d logit with the score frozen
};

/// DSM and its logit-gradient with theta at the exact score of the current
/// mixture: d DSM / d logit = w (1 - w) (D_1 - D_2).
inline MixtureWeightGradient mixture_weight_dsm(const MixtureWeightFamily& family, double sigma,
                                                const NormalQuadrature& rule) {
    const GaussianMixture mix = family.mixture();
    const double w = family.weight();
    const double d1 = detail::component_dsm(mix, family.first(), sigma, rule);
    const double d2 = detail::component_dsm(mix, family.second(), sigma, rule);
    return {w * d1 + (1.0 - w) * d2, w * (1.0 - w) * (d1 - d2)};
}

/// Central difference of C2 over the logit.
inline double c2_logit_derivative(const MixtureWeightFamily& family, double sigma, const NormalQuadrature& rule,
                                  double h = 1e-4) {
    auto c2_at = [&](double logit) {
        MixtureWeightFamily f = family;
        f.set_params({logit});
        return c2_quadrature(f.mixture(), sigma, rule);
    };
    const double l = family.params()[0];
    return (c2_at(l + h) - c2_at(l - h)) / (2.0 * h);
}

/// Score-norm metric (C2 averaged over the schedule) by quadrature.
inline double score_norm_quadrature(const GaussianMixture& dist, const NoiseSchedule& schedule,
                                    const NormalQuadrature& rule) {
    double total = 0.0;
    for (double sigma : schedule.sigmas()) {
        total += c2_quadrature(dist, sigma, rule);
    }
    return total / static_cast<double>(schedule.size());
}

/// Theta-oracle DSM descent on the weight logit. Each step samples one level.
inline std::pair<MixtureWeightFamily, TrainTrace> optimize_mixture_weight(MixtureWeightFamily family,
                                                                          const NoiseSchedule& schedule,
                                                                          const OptimizerConfig& config,
                                                                          const NormalQuadrature& rule) {
    config.validate();
    TrainTrace trace{family.param_names(), {}};
    Optimizer opt(config, 1);
    Rng rng(config.seed, 1);
    for (std::size_t step = 0; step < config.steps; ++step) {
        const auto sd = detail::next_step(rng, schedule);
        const auto g = mixture_weight_dsm(family, sd.sigma, rule);
        TraceRecord rec;
        rec.step = step;
        rec.sigma = sd.sigma;
        rec.dsm = {g.dsm, 0.0, 0};
        rec.esm = {0.0, 0.0, 0};
        rec.c2 = {c2_quadrature(family.mixture(), sd.sigma, rule), 0.0, 0};
        rec.c3 = c3_closed_form(1, sd.sigma);
        rec.score_norm = {score_norm_quadrature(family.mixture(), schedule, rule), 0.0, 0};
        rec.grad_norm = std::abs(g.grad);
        rec.params = family.params();
        detail::guard("optimize_mixture_weight", step, "dsm", g.dsm);
        trace.records.push_back(std::move(rec));
        Vec phi = family.params();
        opt.step(phi, Vec{g.grad});
        detail::guard_params("optimize_mixture_weight", step, phi);
        family.set_params(std::move(phi));
    }
    return {std::move(family), std::move(trace)};
}

// ---------------------------------------------------------------------------

inline constexpr std::size_t kBiasWindow = 50;

namespace detail {

/// Checks the Theorem-2 identity coordinatewise at one random condition.
template <ScoreModel M, ConditionalFamily F>
void identity_at(const ExperimentConfig& config, ExperimentReport& report, const M& model, const F& family,
                 double sigma, std::uint64_t batch_seed, const std::string& label, std::ostringstream& csv) {
    const SampleBatch batch(batch_seed, config.samples, family.dim(), family.encoder_noise_dim());
    // Per-sample grad DSM - grad ESM + grad C2: zero in expectation.
    const auto g = grad_condition_total_estimate({1.0, -1.0, 1.0, 0.0}, model, family, sigma, batch);
    const auto names = family.param_names();
    for (std::size_t k = 0; k < g.size(); ++k) {
        report.check_se("identity[" + label + " " + names[k] + "]", g.coordinate(k), 0.0, config.tolerance);
        csv << label << "," << sigma << "," << names[k] << "," << format_real(family.params()[k]) << ","
            << format_real(g.value[k]) << "," << format_real(g.std_error[k]) << "\n";
    }
}

/// First and last windows of the score-norm metric.
inline void window_checks(const ExperimentConfig& config, ExperimentReport& report, const TrainTrace& trace,
                          const std::string& prefix, bool expect_increase) {
    if (trace.size() < 2 * kBiasWindow) {
        report.skip(prefix + (expect_increase ? "score_norm_increases" : "score_norm_flat"),
                    "fewer than " + std::to_string(2 * kBiasWindow) + " steps");
        return;
    }
    const auto first = trace.score_norm_window(0, kBiasWindow);
    const auto last = trace.score_norm_window(trace.size() - kBiasWindow, trace.size());
    const double diff = last.value - first.value;
    const double se = combined_std_error(first, last);
    report.measurements[prefix + "score_norm_first50"] = first.value;
    report.measurements[prefix + "score_norm_last50"] = last.value;
    report.measurements[prefix + "score_norm_combined_se"] = se;
    const std::string detail = "last50 - first50 = " + fmt(diff) + ", combined SE " + fmt(se);
    if (expect_increase) {
        report.check(prefix + "score_norm_increases", diff > 5.0 * se, detail + " (need > 5 SE)");
    } else {
        report.check(prefix + "score_norm_flat", std::abs(diff) <= 5.0 * se + config.tolerance.floor,
                     detail + " (need |diff| <= 5 SE)");
    }
}

}  // namespace detail

inline bool e2_runs(const ExperimentConfig& config, const std::string& family) {
    return config.family == "all" || config.family == family;
}

inline void e2_gaussian(const ExperimentConfig& config, std::size_t identity_count, ExperimentReport& report,
                        const ArtifactSink& sink, std::ostringstream& csv) {
    const Rng base = Rng(config.seed, scenario_stream("e2")).child(10);
    const std::size_t d = config.dim;
    std::size_t nonzero = 0, total = 0;
    for (std::size_t k = 0; k < identity_count; ++k) {
        Rng rng = base.child(k);
        const GaussianFamily fam(random_gaussian(rng, d));
        const MlpScoreModel model(d, 2 * d, {8}, rng);
        const double sigma = config.schedule[rng.index(config.schedule.size())];
        const std::uint64_t seed = rng.next_u64();
        detail::identity_at(config, report, model, fam, sigma, seed, "gaussian#" + std::to_string(k), csv);
        const auto c2 = grad_condition_total(Objective::c2, model, fam, sigma,
                                             SampleBatch(seed, config.samples, d));
        for (std::size_t i = 0; i < d; ++i) {
            nonzero += c2.value[i] != 0.0 ? 1 : 0;
            ++total;
        }
    }
    if (identity_count > 0) {
        report.check("gaussian_c2_mean_gradient_zero", nonzero == 0,
                     std::to_string(nonzero) + " of " + std::to_string(total) + " mean coordinates nonzero");
    }

    // Theta-oracle runs from N(0.5, 1): DSM, then the ESM control.
    const GaussianFamily start(DiagGaussian::isotropic(d, 0.5, 1.0));
    const LinearScoreModel oracle(config.schedule, d);
    try {
        const auto dsm = optimize_condition(oracle, start, config.schedule, config.optimizer, Regime::theta_oracle,
                                            Objective::dsm);
        const auto esm = optimize_condition(oracle, start, config.schedule, config.optimizer, Regime::theta_oracle,
                                            Objective::esm);
        sink.trace(report, "gaussian_dsm.csv", dsm.trace);
        sink.trace(report, "gaussian_esm.csv", esm.trace);
        report.measurements["gaussian_dsm"] = dsm.trace.summary();
        report.measurements["gaussian_esm"] = esm.trace.summary();
        if (config.optimizer.steps == 0) {
            report.skip("gaussian_scale_halves", "zero steps");
        } else {
            const double s_init = start.distribution().std(0);
            const double s_final = dsm.family.distribution().std(0);
            report.measurements["gaussian_s_init"] = s_init;
            report.measurements["gaussian_s_final"] = s_final;
            report.check("gaussian_scale_halves", s_final < 0.5 * s_init,
                         "s_final = " + fmt(s_final) + ", s_init = " + fmt(s_init));
        }
        detail::window_checks(config, report, dsm.trace, "gaussian_dsm_", true);
        detail::window_checks(config, report, esm.trace, "gaussian_esm_", false);
    } catch (const DivergenceError& e) {
        report.check("gaussian_optimization", false, e.what());
    }
}

inline void e2_encoder(const ExperimentConfig& config, std::size_t identity_count, ExperimentReport& report,
                       const ArtifactSink& sink, std::ostringstream& csv) {
    const Rng base = Rng(config.seed, scenario_stream("e2")).child(20);
    const std::size_t d = config.dim;
    for (std::size_t k = 0; k < identity_count; ++k) {
        Rng rng = base.child(k);
        const double alpha = uniform_in(rng, -2.0, 2.0);
        const double beta = uniform_in(rng, 0.3, 2.0);
        const EncoderFamily fam(NoisyEncoderModel(alpha, beta, random_gaussian(rng, d)));
        const MlpScoreModel model(d, d, {8}, rng);
        const double sigma = config.schedule[rng.index(config.schedule.size())];
        detail::identity_at(config, report, model, fam, sigma, rng.next_u64(), "encoder#" + std::to_string(k), csv);
    }

    const NoisyEncoderModel start(0.5, 1.0, DiagGaussian::isotropic(d, 0.3, 1.2));
    try {
        const auto r = optimize_condition(LinearScoreModel(config.schedule, d, d), EncoderFamily(start),
                                          config.schedule, config.optimizer, Regime::theta_oracle, Objective::dsm);
        sink.trace(report, "encoder_dsm.csv", r.trace);
        report.measurements["encoder_dsm"] = r.trace.summary();
        if (config.optimizer.steps == 0) {
            report.skip("encoder_gain_grows", "zero steps");
            return;
        }
        const double a0 = start.alpha(), a1 = r.family.params()[0];
        const double v0 = start.posterior_variance(0), v1 = r.family.model().posterior_variance(0);
        report.measurements["encoder_alpha"] = {a0, a1};
        report.measurements["encoder_posterior_variance"] = {v0, v1};
        report.check("encoder_gain_grows", std::abs(a1) > std::abs(a0),
                     "|alpha| " + fmt(std::abs(a0)) + " -> " + fmt(std::abs(a1)));
        report.check("encoder_posterior_variance_falls", v1 < v0,
                     "posterior variance " + fmt(v0) + " -> " + fmt(v1));
    } catch (const DivergenceError& e) {
        report.check("encoder_optimization", false, e.what());
    }
}

inline void e2_mixture_weight(const ExperimentConfig& config, ExperimentReport& report, const ArtifactSink& sink) {
    const NormalQuadrature rule(kDefaultQuadratureNodes);
    const auto first = DiagGaussian::from_std({-2.0}, {0.5});
    const auto second = DiagGaussian::from_std({2.0}, {0.5});

    // Frozen-score DSM gradient against -dC2/dlogit (ESM is stationary at the oracle).
    double worst = 0.0;
    for (double logit : {-2.0, -0.7, 0.0, 0.5, 1.3, 3.0}) {
        for (double sigma : config.schedule.sigmas()) {
            const MixtureWeightFamily fam(first, second, logit);
            const double g = mixture_weight_dsm(fam, sigma, rule).grad;
            const double fd = -c2_logit_derivative(fam, sigma, rule);
            worst = std::max(worst, std::abs(g - fd) / std::max(1.0, std::abs(fd)));
        }
    }
    report.measurements["mixture_weight_gradient_vs_c2_max_rel_diff"] = worst;
    report.check("mixture_weight_dsm_gradient_is_minus_c2_gradient", worst <= 1e-6,
                 "max relative difference " + fmt(worst) + " (central-difference tolerance 1e-6)");

    // C2 over the weight range: maxima at the vertices.
    std::ostringstream scan;
    scan << "weight,score_norm\n";
    constexpr std::size_t cells = 40;
    Vec values;
    for (std::size_t i = 0; i <= cells; ++i) {
        const double w = static_cast<double>(i) / cells;
        const GaussianMixture mix({w, 1.0 - w}, {first, second});
        values.push_back(score_norm_quadrature(mix, config.schedule, rule));
        scan << detail::format_real(w) << "," << detail::format_real(values.back()) << "\n";
    }
    const auto top = static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
    const double interior_max = *std::max_element(values.begin() + 1, values.end() - 1);
    report.measurements["weight_scan"] = values;
    report.check("c2_maxima_at_vertices", (top == 0 || top == cells) && interior_max < std::min(values.front(), values.back()),
                 "argmax at weight " + fmt(static_cast<double>(top) / cells) + ", interior max " + fmt(interior_max) +
                     ", vertices " + fmt(values.front()) + " / " + fmt(values.back()));
    sink.text(report, "weight_scan.csv", scan.str());

    // DSM descent from logit 0.5 saturates.
    try {
        const auto [fam, trace] =
            optimize_mixture_weight(MixtureWeightFamily(first, second, 0.5), config.schedule, config.optimizer, rule);
        sink.trace(report, "mixture_weight_dsm.csv", trace);
        report.measurements["mixture_weight_dsm"] = trace.summary();
        if (config.optimizer.steps == 0) {
            report.skip("mixture_weight_saturates", "zero steps");
            return;
        }
        const double w = fam.weight();
        report.measurements["mixture_weight_final"] = w;
        report.check("mixture_weight_saturates", w > 0.95 || w < 0.05, "final weight " + fmt(w));
    } catch (const DivergenceError& e) {
        report.check("mixture_weight_optimization", false, e.what());
    }
}

inline ExperimentReport run_e2_condition_bias(const ExperimentConfig& config, const ArtifactSink& sink = {}) {
    config.validate();
    ExperimentReport report{"e2", config.seed};
    report.measurements["family"] = config.family;
    std::ostringstream csv;
    csv << "condition,sigma,parameter,value,identity_residual,se\n";
    const bool gaussian = e2_runs(config, "gaussian");
    const bool encoder = e2_runs(config, "encoder");
    // The random conditions are split between the two pathwise families.
    const std::size_t n = config.configurations;
    const std::size_t n_gaussian = gaussian ? (encoder ? (n + 1) / 2 : n) : 0;
    const std::size_t n_encoder = encoder ? n - n_gaussian : 0;
    if (gaussian) {
        e2_gaussian(config, n_gaussian, report, sink, csv);
    }
    if (encoder) {
        e2_encoder(config, n_encoder, report, sink, csv);
    }
    if (e2_runs(config, "mixture-weight")) {
        e2_mixture_weight(config, report, sink);
    }
    if (gaussian || encoder) {
        sink.text(report, "identity.csv", csv.str());
    }
    return report;
}

}  // namespace dsmlab
