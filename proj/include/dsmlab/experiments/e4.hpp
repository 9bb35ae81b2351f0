// experiments/e4.hpp
//
// E4: the decomposition DSM - ESM + C2 - C3 = 0, exactly for linear models
// on Gaussians and within Monte-Carlo error for MLPs on mixtures.

#pragma once

#include <sstream>

#include "dsmlab/experiments/common.hpp"

namespace dsmlab {

inline constexpr std::size_t kE4LinearConfigs = 100;

/// Term weights of the residual, with C2 scaled under the c2-scale fault.
inline TermWeights residual_weights(Fault fault) {
    TermWeights w = TermWeights::residual();
    if (fault == Fault::c2_scale) {
        w.c2 *= kC2FaultScale;
    }
    return w;
}

/// Closed-form residuals for `count` random linear models on random Gaussians.
inline void e4_linear_branch(const ExperimentConfig& config, std::size_t count, ExperimentReport& report,
                             std::ostringstream& csv) {
    Rng rng = Rng(config.seed, scenario_stream("e4")).child(1);
    const TermWeights w = residual_weights(config.fault);
    double worst = 0.0;
    std::size_t failures = 0;
    std::string first_bad;
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t d = 1 + rng.index(3);
        const DiagGaussian dist = random_gaussian(rng, d);
        const std::size_t cdim = (k % 3 == 2) ? d : 0;
        const LinearScoreModel model = random_linear_model(rng, config.schedule, d, cdim);
        Vec c(cdim);
        for (double& v : c) {
            v = uniform_in(rng, -2.0, 2.0);
        }
        const double sigma = config.schedule[rng.index(config.schedule.size())];
        const auto cf = linear_closed_form(model, dist, sigma, c);
        const double residual = detail::combine(w, cf.dsm, cf.esm, cf.c2, cf.c3);
        worst = std::max(worst, std::abs(residual));
        if (std::abs(residual) > config.tolerance.closed_form) {
            ++failures;
            if (first_bad.empty()) {
                first_bad = "config " + std::to_string(k) + " residual " + fmt(residual);
            }
        }
        csv << "linear," << k << ",gaussian-d" << d << "," << sigma << ",linear," << detail::format_real(residual)
            << ",0\n";
    }
    report.measurements["linear_configs"] = count;
    report.measurements["linear_max_abs_residual"] = worst;
    report.check("linear_closed_form_residual_zero", failures == 0,
                 failures == 0 ? "max |residual| = " + fmt(worst) + " over " + std::to_string(count) + " configs"
                               : std::to_string(failures) + " configs above " + fmt(config.tolerance.closed_form) +
                                     "; first: " + first_bad);
}

/// Monte-Carlo residuals over reference mixtures x schedule levels x two MLPs.
inline void e4_mc_branch(const ExperimentConfig& config, ExperimentReport& report, std::ostringstream& csv) {
    const Rng base = Rng(config.seed, scenario_stream("e4"));
    const TermWeights w = residual_weights(config.fault);
    const std::vector<std::vector<std::size_t>> architectures = {{8}, {16, 16}};
    nlohmann::json rows = nlohmann::json::array();
    std::size_t k = 0;
    for (const auto& [name, dist] : reference_mixtures()) {
        for (double sigma : config.schedule.sigmas()) {
            for (const auto& hidden : architectures) {
                Rng init = base.child(100 + k);
                const MlpScoreModel model(dist.dim(), 0, hidden, init);
                const SampleBatch batch(base.child(200 + k).next_u64(), config.samples, dist.dim());
                const MCEstimate r = loss_combination(w, model, dist, sigma, batch);
                std::string arch = "mlp";
                for (auto h : hidden) {
                    arch += "-" + std::to_string(h);
                }
                const std::string label = name + "/sigma=" + fmt(sigma) + "/" + arch;
                report.check_se("mc_residual[" + label + "]", r, 0.0, config.tolerance);
                rows.push_back({{"distribution", name}, {"sigma", sigma}, {"model", arch}, {"residual", r.value},
                                {"se", r.std_error}, {"n", r.n}});
                csv << "mc," << k << "," << name << "," << sigma << "," << arch << ","
                    << detail::format_real(r.value) << "," << detail::format_real(r.std_error) << "\n";
                ++k;
            }
        }
    }
    report.measurements["mc_configs"] = k;
    report.measurements["mc_residuals"] = rows;
}

inline ExperimentReport run_e4_decomposition_identity(const ExperimentConfig& config,
                                                      const ArtifactSink& sink = {}) {
    config.validate();
    ExperimentReport report{"e4", config.seed};
    report.measurements["fault"] = to_string(config.fault);
    std::ostringstream csv;
    csv << "branch,config,distribution,sigma,model,residual,se\n";
    e4_linear_branch(config, kE4LinearConfigs, report, csv);
    e4_mc_branch(config, report, csv);
    sink.text(report, "residuals.csv", csv.str());
    return report;
}

}  // namespace dsmlab
