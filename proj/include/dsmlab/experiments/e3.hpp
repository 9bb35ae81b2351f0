// experiments/e3.hpp
//
// E3: optimizing p(x) = N(m, u^2) through a frozen teacher score. DSM
// follows grad ESM - grad C2, so it shrinks u below the ESM optimum and
// settles on one teacher mode.

#pragma once

#include <algorithm>
#include <limits>
#include <sstream>

#include "dsmlab/experiments/common.hpp"

namespace dsmlab {

/// ESM of p = N(m, u^2) against a frozen 1-D teacher, averaged over the
/// schedule: E_{x_t ~ N(m, u^2 + sigma^2)}[1/2 (s(x_t) + (x_t - m) / v)^2].
inline double esm_landscape(const GaussianMixture& teacher, double m, double u, const NoiseSchedule& schedule,
                            const NormalQuadrature& rule) {
    double total = 0.0;
    for (double sigma : schedule.sigmas()) {
        const double v = u * u + sigma * sigma;
        total += rule.normal_expectation(
            [&](double x) {
                const ConstSpan xs(&x, 1);
                const double r = marginal_score(teacher, xs, sigma)[0] + (x - m) / v;
                return 0.5 * r * r;
            },
            m, std::sqrt(v));
    }
    return total / static_cast<double>(schedule.size());
}

struct LandscapeMinimum {
    double m;
    double u;
    double value;
};

/// Local minima of the ESM landscape over (m, log u): grid-local minima on
/// m in [-4, 4] and log u in [-3, 1.5] (step 0.1), each refined by a
/// shrinking compass search down to step 1e-5. Duplicates are merged.
inline std::vector<LandscapeMinimum> esm_landscape_minima(const GaussianMixture& teacher,
                                                          const NoiseSchedule& schedule) {
    require(teacher.dim() == 1, "esm_landscape_minima: one-dimensional teacher required");
    const NormalQuadrature coarse(128);
    const NormalQuadrature fine(kDefaultQuadratureNodes);
    constexpr int nm = 81, nl = 46;
    auto m_at = [](int i) { return -4.0 + 0.1 * i; };
    auto l_at = [](int j) { return -3.0 + 0.1 * j; };
    std::vector<double> grid(nm * nl);
    for (int i = 0; i < nm; ++i) {
        for (int j = 0; j < nl; ++j) {
            grid[i * nl + j] = esm_landscape(teacher, m_at(i), std::exp(l_at(j)), schedule, coarse);
        }
    }
    std::vector<LandscapeMinimum> out;
    for (int i = 1; i + 1 < nm; ++i) {
        for (int j = 1; j + 1 < nl; ++j) {
            const double here = grid[i * nl + j];
            bool lowest = true;
            for (int di = -1; di <= 1 && lowest; ++di) {
                for (int dj = -1; dj <= 1; ++dj) {
                    if ((di || dj) && grid[(i + di) * nl + j + dj] < here) {
                        lowest = false;
                        break;
                    }
                }
            }
            if (!lowest) {
                continue;
            }
            double m = m_at(i), l = l_at(j);
            double best = esm_landscape(teacher, m, std::exp(l), schedule, fine);
            for (double h = 0.05; h > 1e-5;) {
                bool moved = false;
                for (auto [dm, dl] : {std::pair{h, 0.0}, {-h, 0.0}, {0.0, h}, {0.0, -h}}) {
                    const double f = esm_landscape(teacher, m + dm, std::exp(l + dl), schedule, fine);
                    if (f < best) {
                        best = f;
                        m += dm;
                        l += dl;
                        moved = true;
                        break;
                    }
                }
                if (!moved) {
                    h *= 0.5;
                }
            }
            const bool seen = std::any_of(out.begin(), out.end(), [&](const LandscapeMinimum& o) {
                return std::abs(o.m - m) < 1e-3 && std::abs(std::log(o.u) - l) < 1e-3;
            });
            if (!seen) {
                out.push_back({m, std::exp(l), best});
            }
        }
    }
    return out;
}

namespace detail {

/// Corollary identity grad DSM - grad ESM + grad C2 = 0 at one p, per coordinate.
template <ScoreModel M>
void distribution_identity_at(const ExperimentConfig& config, ExperimentReport& report, const M& teacher,
                              const DiagGaussian& p, double sigma, std::uint64_t batch_seed, const std::string& label,
                              std::ostringstream& csv) {
    const GaussianFamily fam(p);
    const SampleBatch batch(batch_seed, config.samples, fam.dim());
    const auto g = grad_condition_total_estimate({1.0, -1.0, 1.0, 0.0}, teacher, fam, sigma, batch);
    const auto names = fam.param_names();
    for (std::size_t k = 0; k < g.size(); ++k) {
        report.check_se("identity[" + label + " " + names[k] + "]", g.coordinate(k), 0.0, config.tolerance);
        csv << label << "," << sigma << "," << names[k] << "," << format_real(fam.params()[k]) << ","
            << format_real(g.value[k]) << "," << format_real(g.std_error[k]) << "\n";
    }
}

}  // namespace detail

inline ExperimentReport run_e3_distribution_bias(const ExperimentConfig& config, const ArtifactSink& sink = {}) {
    config.validate();
    require(config.dim == 1, "e3: the two-mode teacher is one-dimensional");
    ExperimentReport report{"e3", config.seed};
    const Rng base(config.seed, scenario_stream("e3"));
    const GaussianMixture teacher_dist = two_mode_mixture();
    const ExactScoreModel teacher(teacher_dist);
    std::ostringstream csv;
    csv << "distribution,sigma,parameter,value,identity_residual,se\n";

    // (i) Corollary identity at random p.
    for (std::size_t k = 0; k < config.configurations; ++k) {
        Rng rng = base.child(1 + k);
        const DiagGaussian p = random_gaussian(rng, 1);
        const double sigma = config.schedule[rng.index(config.schedule.size())];
        detail::distribution_identity_at(config, report, teacher, p, sigma, rng.next_u64(), "p#" + std::to_string(k),
                                         csv);
    }
    sink.text(report, "identity.csv", csv.str());

    // Single-Gaussian teacher with p at the teacher: ESM is stationary and
    // DSM pushes log u with gradient k^2 u^2, k = 1 / (1 + sigma^2).
    {
        const DiagGaussian unit = DiagGaussian::isotropic(1, 0.0, 1.0);
        const ExactScoreModel single{GaussianMixture(unit)};
        for (std::size_t l = 0; l < config.schedule.size(); ++l) {
            const double sigma = config.schedule[l];
            const SampleBatch batch(base.child(500 + l).next_u64(), config.samples, 1);
            const auto esm = grad_distribution(Objective::esm, single, unit, sigma, batch);
            const auto dsm = grad_distribution(Objective::dsm, single, unit, sigma, batch);
            const double k = 1.0 / (1.0 + sigma * sigma);
            const std::string at = "[sigma=" + fmt(sigma) + "]";
            report.check_se("single_teacher_esm_mean_gradient_zero" + at, esm.coordinate(0), 0.0, config.tolerance);
            report.check_se("single_teacher_esm_log_std_gradient_zero" + at, esm.coordinate(1), 0.0,
                            config.tolerance);
            report.check_se("single_teacher_dsm_mean_gradient_zero" + at, dsm.coordinate(0), 0.0, config.tolerance);
            report.check_se("single_teacher_dsm_log_std_gradient" + at, dsm.coordinate(1), k * k, config.tolerance);
            const auto g = dsm.coordinate(1);
            report.check("single_teacher_dsm_shrinks_u" + at,
                         g.value - config.tolerance.se_multiplier * g.std_error > 0.0,
                         "d DSM / d log u = " + fmt(g.value) + " +- " + fmt(g.std_error) + " (descent lowers u)");
        }
    }

    // (ii)-(iii) DSM and ESM runs from N(0, 1) on the same draws.
    const DiagGaussian start = DiagGaussian::isotropic(1, 0.0, 1.0);
    report.measurements["p_init"] = {{"m", start.mean()[0]}, {"u", start.std(0)}};
    try {
        const auto dsm = optimize_distribution(teacher, start, config.schedule, config.optimizer, Objective::dsm);
        const auto esm = optimize_distribution(teacher, start, config.schedule, config.optimizer, Objective::esm);
        sink.trace(report, "trace_dsm.csv", dsm.trace);
        sink.trace(report, "trace_esm.csv", esm.trace);
        const double m_dsm = dsm.p.mean()[0], u_dsm = dsm.p.std(0);
        const double m_esm = esm.p.mean()[0], u_esm = esm.p.std(0);
        report.measurements["dsm_final"] = {{"m", m_dsm}, {"u", u_dsm}};
        report.measurements["esm_final"] = {{"m", m_esm}, {"u", u_esm}};
        report.measurements["dsm_trace"] = dsm.trace.summary();
        report.measurements["esm_trace"] = esm.trace.summary();
        if (config.optimizer.steps == 0) {
            report.skip("dsm_u_below_esm_u", "zero steps");
            report.skip("dsm_mean_at_landscape_mode", "zero steps");
            return report;
        }
        report.measurements["dsm_u_below_half"] = u_dsm < 0.5;
        report.check("dsm_u_below_esm_u", u_dsm < u_esm, "u_DSM = " + fmt(u_dsm) + ", u_ESM = " + fmt(u_esm));

        // Mode minima: the landscape's global minima, one per teacher mode.
        const auto minima = esm_landscape_minima(teacher_dist, config.schedule);
        double lowest = std::numeric_limits<double>::infinity();
        nlohmann::json found = nlohmann::json::array();
        for (const auto& mn : minima) {
            lowest = std::min(lowest, mn.value);
            found.push_back({{"m", mn.m}, {"u", mn.u}, {"esm", mn.value}});
        }
        report.measurements["esm_landscape_minima"] = found;
        const LandscapeMinimum* nearest = nullptr;
        for (const auto& mn : minima) {
            if (mn.value <= lowest + 1e-9 * std::max(1.0, std::abs(lowest)) &&
                (!nearest || std::abs(mn.m - m_dsm) < std::abs(nearest->m - m_dsm))) {
                nearest = &mn;
            }
        }
        if (!nearest) {
            report.check("dsm_mean_at_landscape_mode", false, "no local minimum found on the landscape grid");
        } else {
            report.measurements["mode_reached"] = nearest->m;
            report.check("dsm_mean_at_landscape_mode", std::abs(m_dsm - nearest->m) <= 0.2,
                         "m_DSM = " + fmt(m_dsm) + ", nearest mode minimum at m = " + fmt(nearest->m) +
                             " (u = " + fmt(nearest->u) + ")");
        }
    } catch (const DivergenceError& e) {
        report.check("distribution_optimization", false, e.what());
    }
    return report;
}

}  // namespace dsmlab
