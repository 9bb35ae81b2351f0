// experiments/e6.hpp
//
// E6: E[s^T grad log q(x_t)] = E[s^T grad log q(x_t | x)] for any score
// model s, checked on paired samples.

#pragma once

#include <sstream>

#include "dsmlab/experiments/common.hpp"

namespace dsmlab {

inline ExperimentReport run_e6_s1_identity(const ExperimentConfig& config, const ArtifactSink& sink = {}) {
    config.validate();
    ExperimentReport report{"e6", config.seed};
    const Rng base(config.seed, scenario_stream("e6"));
    const auto mixtures = reference_mixtures();
    std::ostringstream csv;
    csv << "model,kind,distribution,sigma,cross_marginal,cross_marginal_se,cross_conditional,cross_conditional_se,"
           "difference,difference_se\n";
    nlohmann::json rows = nlohmann::json::array();

    auto evaluate = [&](const auto& model, const std::string& kind, const NamedMixture& m, double sigma,
                        std::uint64_t batch_seed, std::size_t k) {
        const SampleBatch batch(batch_seed, config.samples, m.dist.dim());
        const auto terms = evaluate_terms(model, m.dist, sigma, batch);
        const auto diff = cross_term_difference(model, m.dist, sigma, batch);
        csv << k << "," << kind << "," << m.name << "," << sigma << "," << detail::format_real(terms.cross_marginal.value)
            << "," << detail::format_real(terms.cross_marginal.std_error) << ","
            << detail::format_real(terms.cross_conditional.value) << ","
            << detail::format_real(terms.cross_conditional.std_error) << "," << detail::format_real(diff.value) << ","
            << detail::format_real(diff.std_error) << "\n";
        rows.push_back({{"model", k},
                        {"kind", kind},
                        {"distribution", m.name},
                        {"sigma", sigma},
                        {"cross_marginal", terms.cross_marginal.value},
                        {"cross_conditional", terms.cross_conditional.value},
                        {"difference", diff.value},
                        {"difference_se", diff.std_error}});
        return std::pair{terms, diff};
    };

    // Random models, alternating linear and MLP, cycling over the mixtures.
    const std::size_t count = config.configurations;
    for (std::size_t k = 0; k < count; ++k) {
        Rng rng = base.child(1 + k);
        const NamedMixture& m = mixtures[k % mixtures.size()];
        const double sigma = config.schedule[rng.index(config.schedule.size())];
        const std::uint64_t batch_seed = rng.next_u64();
        const std::string label = std::to_string(k) + "/" + m.name + "/sigma=" + fmt(sigma);
        if (k % 2 == 0) {
            const auto model = random_linear_model(rng, config.schedule, m.dist.dim());
            const auto [terms, diff] = evaluate(model, "linear", m, sigma, batch_seed, k);
            report.check_se("cross_terms_agree[linear " + label + "]", diff, 0.0, config.tolerance);
        } else {
            const std::vector<std::size_t> hidden = (k % 4 == 1) ? std::vector<std::size_t>{8}
                                                                 : std::vector<std::size_t>{16, 16};
            const MlpScoreModel model(m.dist.dim(), 0, hidden, rng);
            const auto [terms, diff] = evaluate(model, "mlp", m, sigma, batch_seed, k);
            report.check_se("cross_terms_agree[mlp " + label + "]", diff, 0.0, config.tolerance);
        }
    }

    // The zero model makes both integrands vanish sample by sample.
    {
        const LinearScoreModel zero(config.schedule, 1);
        const auto [terms, diff] = evaluate(zero, "zero", mixtures[0], config.schedule[0], base.child(500).next_u64(),
                                            count);
        report.check("zero_model_terms_exactly_zero",
                     terms.cross_marginal.value == 0.0 && terms.cross_conditional.value == 0.0,
                     "marginal=" + fmt(terms.cross_marginal.value) + " conditional=" +
                         fmt(terms.cross_conditional.value));
    }

    // A 1-D linear model against deterministic quadrature of the marginal form.
    {
        const NamedMixture& m = mixtures[0];
        const double sigma = config.schedule[0];
        LinearScoreModel model(config.schedule, 1);
        for (std::size_t l = 0; l < config.schedule.size(); ++l) {
            model.set_level(l, Vec{-0.8}, Vec{0.3});
        }
        const auto [terms, diff] = evaluate(model, "linear-1d", m, sigma, base.child(501).next_u64(), count + 1);
        const NormalQuadrature rule(kDefaultQuadratureNodes);
        const double quad = rule.mixture_expectation(
            [&](double x) {
                const ConstSpan xs(&x, 1);
                return model.eval(xs, sigma, {})[0] * marginal_score(m.dist, xs, sigma)[0];
            },
            m.dist.noised(sigma));
        report.measurements["quadrature_cross_term"] = quad;
        report.check_se("cross_marginal_matches_quadrature", terms.cross_marginal, quad, config.tolerance);
        report.check_se("cross_conditional_matches_quadrature", terms.cross_conditional, quad, config.tolerance);
    }

    report.measurements["models"] = rows;
    sink.text(report, "cross_terms.csv", csv.str());
    return report;
}

}  // namespace dsmlab
