// experiments/common.hpp
//
// Configuration, verdict bookkeeping and artifact output shared by the
// scenarios E1-E6 and the verify suite.

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "dsmlab/checkpoint.hpp"
#include "dsmlab/optimization.hpp"
#include "dsmlab/quadrature.hpp"

namespace dsmlab {

enum class Fault { none, c2_scale, esm_target };

inline const char* to_string(Fault f) {
    switch (f) {
        case Fault::none: return "none";
        case Fault::c2_scale: return "c2-scale";
        case Fault::esm_target: return "esm-target";
    }
    return "?";
}

inline Fault parse_fault(const std::string& s) {
    if (s == "none" || s.empty()) {
        return Fault::none;
    }
    if (s == "c2-scale") {
        return Fault::c2_scale;
    }
    if (s == "esm-target") {
        return Fault::esm_target;
    }
    throw std::invalid_argument("unknown fault '" + s + "' (expected c2-scale or esm-target)");
}

/// Multiplier applied to C2 and offset added to the ESM target under a fault.
inline constexpr double kC2FaultScale = 1.1;
inline constexpr double kEsmFaultOffset = 0.1;

struct Tolerance {
    double se_multiplier = 3.0;
    double floor = 1e-8;
    double closed_form = 1e-10;
};

inline const std::vector<std::string>& scenario_ids() {
    static const std::vector<std::string> ids = {"e1", "e2", "e3", "e4", "e5", "e6"};
    return ids;
}

inline bool is_scenario(const std::string& id) {
    const auto& ids = scenario_ids();
    return std::find(ids.begin(), ids.end(), id) != ids.end();
}

struct ExperimentConfig {
    std::string scenario = "e1";
    std::size_t dim = 1;
    NoiseSchedule schedule{Vec{0.3, 1.0}};
    std::string family = "all";     // E2: gaussian | encoder | mixture-weight | all
    OptimizerConfig optimizer;
    std::size_t samples = 20000;    // batch size for identity checks
    std::size_t configurations = 20;
    std::size_t probes = 100;
    Tolerance tolerance;
    std::uint64_t seed = 1;
    Fault fault = Fault::none;

    void validate() const {
        require(is_scenario(scenario) || scenario == "verify", "unknown scenario '" + scenario + "'");
        require(dim >= 1, "experiment: dim must be >= 1");
        require(samples >= 2, "experiment: samples must be >= 2");
        require(tolerance.se_multiplier > 0.0 && tolerance.floor > 0.0 && tolerance.closed_form > 0.0,
                "experiment: tolerances must be positive");
        require(family == "all" || family == "gaussian" || family == "encoder" || family == "mixture-weight",
                "experiment: unknown family '" + family + "'");
        optimizer.validate();
    }

    nlohmann::json to_json() const {
        return {{"scenario", scenario},
                {"dim", dim},
                {"schedule", schedule.sigmas()},
                {"family", family},
                {"optimizer",
                 {{"method", to_string(optimizer.method)},
                  {"step_size", optimizer.step_size},
                  {"beta1", optimizer.beta1},
                  {"beta2", optimizer.beta2},
                  {"epsilon", optimizer.epsilon},
                  {"steps", optimizer.steps},
                  {"batch", optimizer.batch},
                  {"seed", optimizer.seed},
                  {"ema_decay", optimizer.ema_decay}}},
                {"samples", samples},
                {"configurations", configurations},
                {"probes", probes},
                {"tolerance",
                 {{"se_multiplier", tolerance.se_multiplier},
                  {"floor", tolerance.floor},
                  {"closed_form", tolerance.closed_form}}},
                {"seed", seed},
                {"fault", to_string(fault)}};
    }
};

/// Stream id of a scenario in Rng(seed, stream).
inline std::uint64_t scenario_stream(const std::string& id) {
    if (id == "verify") {
        return 100;
    }
    return static_cast<std::uint64_t>(id.at(1) - '0');
}

/// Defaults per scenario. The optimizer seed is derived from the run seed.
inline ExperimentConfig default_config(const std::string& scenario, std::uint64_t seed = 1) {
    ExperimentConfig c;
    c.scenario = scenario;
    c.seed = seed;
    c.optimizer.seed = Rng(seed, scenario_stream(scenario)).child(0).next_u64();
    if (scenario == "e1") {
        c.optimizer.step_size = 1e-2;
        c.optimizer.steps = 3000;
        c.optimizer.batch = 2048;
        c.optimizer.ema_decay = 0.998;
    } else if (scenario == "e2") {
        c.optimizer.step_size = 2e-2;
        c.optimizer.steps = 400;
        c.optimizer.batch = 1024;
    } else if (scenario == "e3") {
        c.optimizer.step_size = 2e-2;
        c.optimizer.steps = 1500;
        c.optimizer.batch = 1024;
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------

struct Assertion {
    std::string name;
    bool passed = true;
    bool skipped = false;
    std::string detail;
};

struct ExperimentReport {
    ExperimentReport() = default;
    ExperimentReport(std::string id, std::uint64_t run_seed) : scenario(std::move(id)), seed(run_seed) {}

    std::string scenario;
    std::uint64_t seed = 0;
    bool passed = true;
    std::vector<Assertion> assertions;
    nlohmann::json measurements = nlohmann::json::object();
    std::vector<std::string> artifacts;  // relative to the run directory
    double seconds = 0.0;

    bool check(const std::string& name, bool ok, const std::string& detail = {}) {
        assertions.push_back({name, ok, false, detail});
        passed = passed && ok;
        return ok;
    }

    void skip(const std::string& name, const std::string& reason) { assertions.push_back({name, true, true, reason}); }

    /// |e - target| <= k SE + floor.
    bool check_se(const std::string& name, const MCEstimate& e, double target, const Tolerance& tol) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "value=%.6g se=%.3g target=%.6g z=%.2f", e.value, e.std_error, target,
                      e.z_score(target));
        return check(name, e.within(target, tol.se_multiplier, tol.floor), buf);
    }

    bool check_close(const std::string& name, double value, double target, double tol) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "value=%.6g target=%.6g |diff|=%.3g tol=%.3g", value, target,
                      std::abs(value - target), tol);
        return check(name, std::abs(value - target) <= tol, buf);
    }

    const Assertion* first_failure() const {
        for (const auto& a : assertions) {
            if (!a.passed) {
                return &a;
            }
        }
        return nullptr;
    }

    std::size_t count(bool want_passed) const {
        std::size_t n = 0;
        for (const auto& a : assertions) {
            n += (!a.skipped && a.passed == want_passed) ? 1 : 0;
        }
        return n;
    }

    /// Appends another report's assertions under a prefix.
    void absorb(const ExperimentReport& other, const std::string& prefix) {
        for (auto a : other.assertions) {
            a.name = prefix + a.name;
            passed = passed && a.passed;
            assertions.push_back(std::move(a));
        }
        measurements[prefix.substr(0, prefix.size() - 1)] = other.measurements;
    }

    /// Wall-clock time is left out so that reruns serialize identically.
    nlohmann::json to_json() const {
        nlohmann::json list = nlohmann::json::array();
        for (const auto& a : assertions) {
            list.push_back({{"name", a.name}, {"passed", a.passed}, {"skipped", a.skipped}, {"detail", a.detail}});
        }
        return {{"scenario", scenario},
                {"seed", seed},
                {"verdict", passed ? "pass" : "fail"},
                {"assertions", list},
                {"measurements", measurements},
                {"artifacts", artifacts}};
    }
};

/// Writes artifacts into one run directory; a default-constructed sink
/// discards everything.
class ArtifactSink {
public:
    ArtifactSink() = default;
    explicit ArtifactSink(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(*dir_);
    }

    bool enabled() const { return dir_.has_value(); }
    const std::optional<std::filesystem::path>& dir() const { return dir_; }

    void trace(ExperimentReport& report, const std::string& name, const TrainTrace& trace) const {
        if (!dir_) {
            return;
        }
        std::ofstream os(*dir_ / name);
        trace.write_csv(os);
        report.artifacts.push_back(name);
    }

    void text(ExperimentReport& report, const std::string& name, const std::string& content) const {
        if (!dir_) {
            return;
        }
        std::ofstream os(*dir_ / name);
        os << content;
        report.artifacts.push_back(name);
    }

    /// report.json, written last.
    void report(const ExperimentReport& report) const {
        if (!dir_) {
            return;
        }
        std::ofstream os(*dir_ / "report.json");
        os << report.to_json().dump(2) << "\n";
    }

private:
    std::optional<std::filesystem::path> dir_;
};

inline std::string run_dir_name(const std::string& scenario, std::uint64_t seed) {
    return scenario + "_seed" + std::to_string(seed);
}

// ---------------------------------------------------------------------------
// Shared test distributions.

/// Modes at +-2 with std 0.5.
inline GaussianMixture two_mode_mixture() { return GaussianMixture::symmetric({{-2.0}, {2.0}}, 0.5); }

inline GaussianMixture three_component_mixture() {
    return GaussianMixture({0.2, 0.5, 0.3}, {DiagGaussian::from_std({-3.0}, {0.4}), DiagGaussian::from_std({0.0}, {0.8}),
                                              DiagGaussian::from_std({2.5}, {0.5})});
}

inline GaussianMixture planar_mixture() {
    return GaussianMixture({0.6, 0.4}, {DiagGaussian::from_std({-1.0, 1.0}, {0.5, 0.8}),
                                        DiagGaussian::from_std({1.5, -0.5}, {0.7, 0.3})});
}

struct NamedMixture {
    std::string name;
    GaussianMixture dist;
};

inline std::vector<NamedMixture> reference_mixtures() {
    return {{"two-mode", two_mode_mixture()}, {"three-component", three_component_mixture()},
            {"planar", planar_mixture()}};
}

/// Uniform draw in [lo, hi).
inline double uniform_in(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

/// Diagonal Gaussian with means in [-3, 3) and stds in [0.2, 2).
inline DiagGaussian random_gaussian(Rng& rng, std::size_t d) {
    Vec mean(d), std(d);
    for (std::size_t i = 0; i < d; ++i) {
        mean[i] = uniform_in(rng, -3.0, 3.0);
        std[i] = uniform_in(rng, 0.2, 2.0);
    }
    return DiagGaussian::from_std(std::move(mean), std);
}

/// Linear model with a in [-3, 1) and b in [-2, 2) at every level.
inline LinearScoreModel random_linear_model(Rng& rng, const NoiseSchedule& schedule, std::size_t d,
                                            std::size_t condition_dim = 0) {
    LinearScoreModel m(schedule, d, condition_dim);
    for (double& v : m.params().values()) {
        v = uniform_in(rng, -2.0, 2.0);
    }
    for (std::size_t l = 0; l < schedule.size(); ++l) {
        const std::string p = "level" + std::to_string(l) + ".a";
        for (double& v : m.params().view(p)) {
            v = uniform_in(rng, -3.0, 1.0);
        }
    }
    return m;
}

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace dsmlab
