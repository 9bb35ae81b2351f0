// experiments/e1.hpp
//
// E1: DSM and ESM have the same theta-gradient. Checked in closed form for
// linear models, per coordinate for an MLP on paired samples, and through
// the models the two objectives train.

#pragma once

#include <sstream>

#include "dsmlab/experiments/common.hpp"

namespace dsmlab {

/// ESM closed-form gradient, with the target shifted by `offset` under the
/// esm-target fault: E[x_t] = mu, so d/da gains -offset * mu and d/db -offset.
inline Vec esm_gradient_with_fault(const LinearScoreModel& model, const DiagGaussian& dist, double sigma,
                                   ConstSpan c, double offset) {
    Vec g = linear_closed_form_gradient(Objective::esm, model, dist, sigma, c);
    if (offset == 0.0) {
        return g;
    }
    const std::string p = "level" + std::to_string(model.level_of(sigma));
    const std::size_t off_a = model.params().segment(p + ".a").offset;
    const std::size_t off_b = model.params().segment(p + ".b").offset;
    for (std::size_t i = 0; i < dist.dim(); ++i) {
        g[off_a + i] -= offset * dist.mean()[i];
        g[off_b + i] -= offset;
        if (model.condition_dim() > 0) {
            g[model.params().segment(p + ".w").offset + i] -= offset * c[model.condition_dim() == 1 ? 0 : i];
        }
    }
    return g;
}

/// Per-sample grad DSM - grad ESM over theta; `offset` shifts the ESM target.
template <ScoreModel M>
VectorEstimate theta_gradient_difference(const M& model, const GaussianMixture& dist, double sigma,
                                         const SampleBatch& batch, double offset = 0.0) {
    VectorAccumulator acc(model.params().size());
    Vec upstream(dist.dim());
    for (std::size_t i = 0; i < batch.n; ++i) {
        const auto p = detail::unconditional_point(model, dist, sigma, batch, i, {});
        for (std::size_t j = 0; j < upstream.size(); ++j) {
            upstream[j] = (p.t_marg[j] + offset) - p.t_cond[j];
        }
        acc.add(model.backward(p.x_t, sigma, {}, upstream).params);
    }
    return acc.estimate();
}

/// Closed-form gradient equality for `count` random linear models.
inline void e1_linear_branch(const ExperimentConfig& config, std::size_t count, ExperimentReport& report) {
    Rng rng = Rng(config.seed, scenario_stream("e1")).child(1);
    const double offset = config.fault == Fault::esm_target ? kEsmFaultOffset : 0.0;
    double worst = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t d = 1 + rng.index(3);
        const DiagGaussian dist = random_gaussian(rng, d);
        const std::size_t cdim = (k % 2 == 1) ? 1 : 0;
        const LinearScoreModel model = random_linear_model(rng, config.schedule, d, cdim);
        const Vec c = cdim ? Vec{uniform_in(rng, -2.0, 2.0)} : Vec{};
        const double sigma = config.schedule[rng.index(config.schedule.size())];
        const Vec gd = linear_closed_form_gradient(Objective::dsm, model, dist, sigma, c);
        const Vec ge = esm_gradient_with_fault(model, dist, sigma, c, offset);
        for (std::size_t i = 0; i < gd.size(); ++i) {
            worst = std::max(worst, std::abs(gd[i] - ge[i]));
        }
    }
    report.measurements["linear_configs"] = count;
    report.measurements["linear_max_abs_gradient_difference"] = worst;
    report.check("linear_closed_form_gradients_equal", worst <= config.tolerance.closed_form,
                 "max |grad DSM - grad ESM| = " + fmt(worst) + " over " + std::to_string(count) + " configs");
}

inline constexpr std::size_t kE1GradientCheckWidth = 8;
inline const std::vector<std::size_t> kE1TrainedWidths = {16, 16};

inline ExperimentReport run_e1_theta_equivalence(const ExperimentConfig& config, const ArtifactSink& sink = {}) {
    config.validate();
    ExperimentReport report{"e1", config.seed};
    const Rng base(config.seed, scenario_stream("e1"));
    const double offset = config.fault == Fault::esm_target ? kEsmFaultOffset : 0.0;
    report.measurements["fault"] = to_string(config.fault);
    const GaussianMixture dist = two_mode_mixture();

    // (i) Closed form.
    e1_linear_branch(config, config.configurations, report);

    // (ii) MLP theta-gradients, per coordinate on paired samples.
    {
        Rng init = base.child(2);
        const MlpScoreModel model(dist.dim(), 0, {kE1GradientCheckWidth}, init);
        const auto names = model.params().coordinate_names();
        nlohmann::json levels = nlohmann::json::array();
        for (std::size_t l = 0; l < config.schedule.size(); ++l) {
            const double sigma = config.schedule[l];
            const SampleBatch batch(base.child(10 + l).next_u64(), config.samples, dist.dim());
            const auto diff = theta_gradient_difference(model, dist, sigma, batch, offset);
            std::size_t bad = 0;
            double max_z = 0.0;
            std::string worst;
            for (std::size_t i = 0; i < diff.size(); ++i) {
                const auto e = diff.coordinate(i);
                const double z = e.z_score(0.0);
                if (z > max_z) {
                    max_z = z;
                    worst = names[i];
                }
                bad += e.within(0.0, config.tolerance.se_multiplier, config.tolerance.floor) ? 0 : 1;
            }
            levels.push_back({{"sigma", sigma}, {"coordinates", diff.size()}, {"outside", bad}, {"max_z", max_z},
                              {"worst", worst}});
            report.check("mlp_gradients_agree[sigma=" + fmt(sigma) + "]", bad == 0,
                         std::to_string(bad) + " of " + std::to_string(diff.size()) +
                             " coordinates outside 3 SE; max z " + fmt(max_z) + " at " + worst);
        }
        report.measurements["mlp_gradient_check"] = levels;
    }

    // (iii) DSM- and ESM-trained models from the same start on the same batches.
    Rng init = base.child(3);
    const MlpScoreModel start(dist.dim(), 0, kE1TrainedWidths, init);
    try {
        const auto by_dsm = fit_theta(Objective::dsm, start, dist, config.schedule, config.optimizer);
        const auto by_esm = fit_theta(Objective::esm, start, dist, config.schedule, config.optimizer);
        sink.trace(report, "trace_dsm.csv", by_dsm.trace);
        sink.trace(report, "trace_esm.csv", by_esm.trace);
        Rng probe_rng = base.child(4);
        double between = 0.0, dsm_err = 0.0, esm_err = 0.0;
        std::ostringstream csv;
        csv << "probe,sigma,x_t,dsm_model,esm_model,exact\n";
        for (std::size_t k = 0; k < config.probes; ++k) {
            const double sigma = config.schedule[k % config.schedule.size()];
            Vec eps(dist.dim()), nu(dist.dim());
            const double u = probe_rng.uniform();
            for (std::size_t j = 0; j < eps.size(); ++j) {
                eps[j] = probe_rng.normal();
                nu[j] = probe_rng.normal();
            }
            const Vec x_t = perturb(dist.sample(u, eps), sigma, nu);
            const Vec a = by_dsm.model.eval(x_t, sigma, {});
            const Vec b = by_esm.model.eval(x_t, sigma, {});
            const Vec exact = marginal_score(dist, x_t, sigma);
            for (std::size_t j = 0; j < a.size(); ++j) {
                between += (a[j] - b[j]) * (a[j] - b[j]);
                dsm_err += (a[j] - exact[j]) * (a[j] - exact[j]);
                esm_err += (b[j] - exact[j]) * (b[j] - exact[j]);
            }
            csv << k << "," << sigma << "," << detail::format_real(x_t[0]) << "," << detail::format_real(a[0]) << ","
                << detail::format_real(b[0]) << "," << detail::format_real(exact[0]) << "\n";
        }
        const double n = static_cast<double>(config.probes * dist.dim());
        const double rms = std::sqrt(between / n);
        report.measurements["probe_rms_between"] = rms;
        report.measurements["probe_rms_dsm_vs_exact"] = std::sqrt(dsm_err / n);
        report.measurements["probe_rms_esm_vs_exact"] = std::sqrt(esm_err / n);
        report.check("trained_models_agree", rms <= 5e-2,
                     "RMS over " + std::to_string(config.probes) + " probes = " + fmt(rms) + " (limit 0.05)");
        sink.text(report, "probes.csv", csv.str());
    } catch (const DivergenceError& e) {
        report.check("trained_models_agree", false, e.what());
    }
    return report;
}

}  // namespace dsmlab
