// experiments/verify.hpp
//
// The verify suite: closed forms against independent Monte-Carlo or
// quadrature oracles, the identity scenarios E4-E6, the closed-form E1
// branch, and negative controls that must fail.

#pragma once

#include <sstream>

#include "dsmlab/experiments/e1.hpp"
#include "dsmlab/experiments/e4.hpp"
#include "dsmlab/experiments/e5.hpp"
#include "dsmlab/experiments/e6.hpp"

namespace dsmlab {

namespace detail {

/// C2 of a Gaussian by direct sampling of x_t ~ N(mu, s^2 + sigma^2).
inline MCEstimate c2_direct_mc(const DiagGaussian& dist, double sigma, std::size_t n, Rng& rng) {
    Accumulator acc;
    for (std::size_t k = 0; k < n; ++k) {
        double v = 0.0;
        for (std::size_t i = 0; i < dist.dim(); ++i) {
            const double z = rng.normal();
            v += 0.5 * z * z / (dist.var(i) + sigma * sigma);
        }
        acc.add(v);
    }
    return acc.estimate();
}

struct RegressionOracle {
    MCEstimate mean;
    MCEstimate variance;
};

/// Posterior moments of x | c = c0 by least squares of x on c over joint
/// draws x ~ prior, c = alpha x + beta eta.
inline RegressionOracle posterior_regression(const NoisyEncoderModel& model, double c0, std::size_t n, Rng& rng) {
    Vec xs(n), cs(n);
    double mx = 0.0, mc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        xs[k] = model.prior().mean()[0] + model.prior().std(0) * rng.normal();
        cs[k] = model.alpha() * xs[k] + model.beta() * rng.normal();
        mx += xs[k];
        mc += cs[k];
    }
    mx /= static_cast<double>(n);
    mc /= static_cast<double>(n);
    double scc = 0.0, scx = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        scc += (cs[k] - mc) * (cs[k] - mc);
        scx += (cs[k] - mc) * (xs[k] - mx);
    }
    const double slope = scx / scc;
    double rss = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double e = xs[k] - mx - slope * (cs[k] - mc);
        rss += e * e;
    }
    const double dof = static_cast<double>(n) - 2.0;
    const double s2 = rss / dof;
    const double mean_se = std::sqrt(s2 * (1.0 / static_cast<double>(n) + (c0 - mc) * (c0 - mc) / scc));
    return {{mx + slope * (c0 - mc), mean_se, n}, {s2, s2 * std::sqrt(2.0 / dof), n}};
}

}  // namespace detail

inline void verify_oracles(const ExperimentConfig& config, ExperimentReport& report) {
    const Rng base(config.seed, scenario_stream("verify"));
    const Tolerance& tol = config.tolerance;
    const NormalQuadrature rule(kDefaultQuadratureNodes);

    // C2 of Gaussians: direct sampling and, in one dimension, quadrature.
    const std::vector<DiagGaussian> gaussians = {DiagGaussian::from_std({0.4}, {0.7}),
                                                 DiagGaussian::from_std({-1.0, 2.0}, {0.3, 1.5}),
                                                 DiagGaussian::from_std({0.0, 1.0, -2.0}, {1.0, 0.2, 2.5})};
    for (std::size_t g = 0; g < gaussians.size(); ++g) {
        for (std::size_t l = 0; l < config.schedule.size(); ++l) {
            const double sigma = config.schedule[l];
            const std::string at = "[d=" + std::to_string(gaussians[g].dim()) + " sigma=" + fmt(sigma) + "]";
            Rng rng = base.child(10 * g + l);
            const double cf = c2_closed_form(gaussians[g], sigma);
            report.check_se("c2_closed_form_vs_mc" + at, detail::c2_direct_mc(gaussians[g], sigma, config.samples, rng),
                            cf, tol);
            if (gaussians[g].dim() == 1) {
                report.check_close("c2_closed_form_vs_quadrature" + at,
                                   c2_quadrature(GaussianMixture(gaussians[g]), sigma, rule), cf, tol.closed_form);
            }
        }
    }

    // C3 against its estimator.
    for (std::size_t d = 1; d <= 3; ++d) {
        for (std::size_t l = 0; l < config.schedule.size(); ++l) {
            const double sigma = config.schedule[l];
            const SampleBatch batch(base.child(100 + 10 * d + l).next_u64(), config.samples, d);
            report.check_se("c3_closed_form_vs_mc[d=" + std::to_string(d) + " sigma=" + fmt(sigma) + "]",
                            c3_term(d, sigma, batch), c3_closed_form(d, sigma), tol);
        }
    }

    // Posterior moments against a regression over joint draws.
    const std::vector<std::pair<NoisyEncoderModel, double>> encoders = {
        {NoisyEncoderModel(0.5, 1.0, DiagGaussian::from_std({0.3}, {1.2})), 0.8},
        {NoisyEncoderModel(2.0, 0.4, DiagGaussian::from_std({-1.0}, {0.5})), -1.5},
        {NoisyEncoderModel(-1.3, 2.0, DiagGaussian::from_std({2.0}, {2.0})), 0.0}};
    for (std::size_t k = 0; k < encoders.size(); ++k) {
        const auto& [model, c0] = encoders[k];
        Rng rng = base.child(200 + k);
        const auto exact = posterior_moments(model, c0);
        const auto oracle = detail::posterior_regression(model, c0, config.samples, rng);
        const std::string at = "[encoder#" + std::to_string(k) + "]";
        report.check_se("posterior_mean_vs_regression" + at, oracle.mean, exact.mean, tol);
        report.check_se("posterior_variance_vs_regression" + at, oracle.variance, exact.variance, tol);
    }

    // Linear-model losses against the Monte-Carlo estimators.
    for (std::size_t k = 0; k < 4; ++k) {
        Rng rng = base.child(300 + k);
        const std::size_t d = 1 + k % 3;
        const DiagGaussian dist = random_gaussian(rng, d);
        const LinearScoreModel model = random_linear_model(rng, config.schedule, d);
        const double sigma = config.schedule[k % config.schedule.size()];
        const auto cf = linear_closed_form(model, dist, sigma);
        const SampleBatch batch(rng.next_u64(), config.samples, d);
        const GaussianMixture mix(dist);
        const std::string at = "[linear#" + std::to_string(k) + " d=" + std::to_string(d) + "]";
        report.check_se("linear_dsm_vs_mc" + at, dsm_loss(model, mix, sigma, batch), cf.dsm, tol);
        report.check_se("linear_esm_vs_mc" + at, esm_loss(model, mix, sigma, batch), cf.esm, tol);
    }

    // C2 of mixtures: quadrature against the estimator.
    const std::vector<NamedMixture> mixtures = {{"two-mode", two_mode_mixture()},
                                                {"three-component", three_component_mixture()}};
    for (std::size_t k = 0; k < mixtures.size(); ++k) {
        for (std::size_t l = 0; l < config.schedule.size(); ++l) {
            const double sigma = config.schedule[l];
            const SampleBatch batch(base.child(400 + 10 * k + l).next_u64(), config.samples, 1);
            report.check_se("c2_quadrature_vs_mc[" + mixtures[k].name + " sigma=" + fmt(sigma) + "]",
                            c2_term(mixtures[k].dist, sigma, batch), c2_quadrature(mixtures[k].dist, sigma, rule), tol);
        }
    }
}

/// Runs every check; with `config.fault` set, the fault reaches the E4
/// residual and the E1 closed-form branch so the suite fails.
inline ExperimentReport run_verify(const ExperimentConfig& config, const ArtifactSink& sink = {}) {
    config.validate();
    ExperimentReport report{"verify", config.seed};
    report.measurements["fault"] = to_string(config.fault);
    verify_oracles(config, report);

    auto scenario = [&](const std::string& id) {
        ExperimentConfig c = default_config(id, config.seed);
        c.schedule = config.schedule;
        c.samples = config.samples;
        c.tolerance = config.tolerance;
        c.fault = config.fault;
        return c;
    };

    ExperimentReport e1{"e1", config.seed};
    e1_linear_branch(scenario("e1"), kE4LinearConfigs, e1);
    report.absorb(e1, "e1-linear.");
    report.absorb(run_e4_decomposition_identity(scenario("e4")), "e4.");
    report.absorb(run_e5_c3_markov_invariance(scenario("e5")), "e5.");
    report.absorb(run_e6_s1_identity(scenario("e6")), "e6.");

    // Negative controls: each fault must be detected.
    {
        ExperimentConfig c = scenario("e4");
        c.fault = Fault::c2_scale;
        const auto r = run_e4_decomposition_identity(c);
        const auto* bad = r.first_failure();
        report.check("negative_control[e4 c2-scale]", !r.passed,
                     bad ? "detected by " + bad->name + ": " + bad->detail : "fault went undetected");
    }
    {
        ExperimentConfig c = scenario("e1");
        c.fault = Fault::esm_target;
        ExperimentReport r{"e1", config.seed};
        e1_linear_branch(c, kE4LinearConfigs, r);
        const auto* bad = r.first_failure();
        report.check("negative_control[e1 esm-target]", !r.passed,
                     bad ? "detected by " + bad->name + ": " + bad->detail : "fault went undetected");
    }

    std::ostringstream csv;
    csv << "assertion,passed,skipped,detail\n";
    for (const auto& a : report.assertions) {
        csv << '"' << a.name << "\"," << a.passed << "," << a.skipped << ",\"" << a.detail << "\"\n";
    }
    sink.text(report, "assertions.csv", csv.str());
    return report;
}

}  // namespace dsmlab
