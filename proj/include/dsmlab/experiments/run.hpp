// experiments/run.hpp
//
// Dispatch by scenario id, with wall-clock timing.

#pragma once

#include <chrono>

#include "dsmlab/experiments/e1.hpp"
#include "dsmlab/experiments/e2.hpp"
#include "dsmlab/experiments/e3.hpp"
#include "dsmlab/experiments/e4.hpp"
#include "dsmlab/experiments/e5.hpp"
#include "dsmlab/experiments/e6.hpp"
#include "dsmlab/experiments/verify.hpp"

namespace dsmlab {

/// Runs one scenario (e1..e6 or verify) and writes its report through the sink.
inline ExperimentReport run_scenario(const ExperimentConfig& config, const ArtifactSink& sink = {}) {
    const auto start = std::chrono::steady_clock::now();
    ExperimentReport report;
    const std::string& id = config.scenario;
    if (id == "e1") {
        report = run_e1_theta_equivalence(config, sink);
    } else if (id == "e2") {
        report = run_e2_condition_bias(config, sink);
    } else if (id == "e3") {
        report = run_e3_distribution_bias(config, sink);
    } else if (id == "e4") {
        report = run_e4_decomposition_identity(config, sink);
    } else if (id == "e5") {
        report = run_e5_c3_markov_invariance(config, sink);
    } else if (id == "e6") {
        report = run_e6_s1_identity(config, sink);
    } else if (id == "verify") {
        report = run_verify(config, sink);
    } else {
        throw std::invalid_argument("unknown scenario '" + id + "'");
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    sink.report(report);
    return report;
}

}  // namespace dsmlab
