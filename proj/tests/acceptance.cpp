// Acceptance run: the nine criteria at default settings (seed 1), one
// PASS/FAIL line each. Exit status is nonzero if any criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>

#include "dsmlab.hpp"

using namespace dsmlab;

namespace {

struct Outcome {
    bool passed = true;
    std::string detail;
};

struct Timed {
    ExperimentReport report;
    double seconds = 0.0;
};

Timed timed_run(const std::string& id) {
    const auto start = std::chrono::steady_clock::now();
    auto r = run_scenario(default_config(id, 1));
    return {std::move(r), std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

/// All assertions whose name starts with one of `prefixes` must pass; at
/// least `min_count` must exist.
Outcome assertions(const ExperimentReport& r, const std::vector<std::string>& prefixes, std::size_t min_count) {
    std::size_t n = 0, bad = 0;
    std::string first;
    for (const auto& a : r.assertions) {
        bool match = false;
        for (const auto& p : prefixes) {
            match = match || starts_with(a.name, p);
        }
        if (!match) {
            continue;
        }
        ++n;
        if (a.skipped || !a.passed) {
            ++bad;
            if (first.empty()) {
                first = a.name + (a.skipped ? " skipped: " : ": ") + a.detail;
            }
        }
    }
    Outcome o;
    o.passed = bad == 0 && n >= min_count;
    o.detail = std::to_string(n - bad) + "/" + std::to_string(n) + " checks";
    if (n < min_count) {
        o.detail += ", expected at least " + std::to_string(min_count);
    }
    if (!first.empty()) {
        o.detail += "; first failure " + first;
    }
    return o;
}

/// Number of distinct labels inside "identity[<label> <coordinate>]".
std::size_t identity_conditions(const ExperimentReport& r) {
    std::set<std::string> labels;
    for (const auto& a : r.assertions) {
        if (starts_with(a.name, "identity[")) {
            labels.insert(a.name.substr(9, a.name.find(' ') - 9));
        }
    }
    return labels.size();
}

Outcome with_runtime(Outcome o, double seconds, double limit) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "; %.1f s (limit %.0f s)", seconds, limit);
    o.detail += buf;
    o.passed = o.passed && seconds < limit;
    return o;
}

Outcome require_count(Outcome o, bool ok, const std::string& what) {
    if (!ok) {
        o.passed = false;
        o.detail += "; " + what;
    }
    return o;
}

}  // namespace

int main() {
    int failures = 0;
    auto report = [&](int id, const std::string& title, const Outcome& o) {
        std::cout << (o.passed ? "PASS" : "FAIL") << "  criterion " << id << "  " << title << "  (" << o.detail
                  << ")" << std::endl;
        failures += o.passed ? 0 : 1;
    };

    {
        const auto e4 = timed_run("e4");
        Outcome o = assertions(e4.report, {"linear_closed_form_residual_zero", "mc_residual["}, 13);
        o = require_count(o, e4.report.measurements["linear_configs"] == 100 && e4.report.measurements["mc_configs"] == 12,
                          "expected 100 linear and 12 MC configurations");
        report(1, "decomposition identity", with_runtime(o, e4.seconds, 30));
    }
    {
        const auto e1 = timed_run("e1");
        Outcome o = assertions(e1.report,
                               {"linear_closed_form_gradients_equal", "mlp_gradients_agree[", "trained_models_agree"}, 4);
        o.detail += "; probe RMS " + fmt(e1.report.measurements.value("probe_rms_between", -1.0));
        report(2, "theta-gradient equivalence", with_runtime(o, e1.seconds, 60));
    }
    const auto e2 = timed_run("e2");
    {
        Outcome o = assertions(e2.report, {"identity["}, 20);
        const std::size_t n = identity_conditions(e2.report);
        o = require_count(o, n == 20, "expected 20 conditions, found " + std::to_string(n));
        report(3, "condition-gradient identity", with_runtime(o, e2.seconds, 30));
    }
    const auto e3 = timed_run("e3");
    {
        Outcome o = assertions(e3.report, {"identity["}, 20);
        const std::size_t n = identity_conditions(e3.report);
        o = require_count(o, n == 20, "expected 20 distributions, found " + std::to_string(n));
        report(4, "distribution-gradient identity", with_runtime(o, e3.seconds, 30));
    }
    {
        Outcome o = assertions(
            e2.report, {"gaussian_dsm_score_norm_increases", "gaussian_scale_halves", "gaussian_esm_score_norm_flat"}, 3);
        report(5, "bias toward higher score norm", with_runtime(o, e2.seconds, 120));
    }
    {
        Outcome o = assertions(e3.report, {"dsm_u_below_esm_u", "dsm_mean_at_landscape_mode"}, 2);
        o.detail += "; u_DSM " + fmt(e3.report.measurements["dsm_final"].value("u", -1.0)) + ", u_ESM " +
                    fmt(e3.report.measurements["esm_final"].value("u", -1.0));
        report(6, "distribution collapse", with_runtime(o, e3.seconds, 120));
    }
    {
        const auto e5 = timed_run("e5");
        Outcome o = assertions(e5.report, {"c3[", "no_trend_in_c", "c3_condition_gradient_identically_zero"}, 22);
        o = require_count(o, e5.report.measurements["estimates"].size() == 20, "expected 20 C3 estimates");
        report(7, "C3 invariance", with_runtime(o, e5.seconds, 15));
    }
    {
        const auto e6 = timed_run("e6");
        Outcome o = assertions(e6.report, {"cross_terms_agree["}, 20);
        report(8, "cross-term identity", with_runtime(o, e6.seconds, 30));
    }
    {
        const auto out = std::filesystem::temp_directory_path() / "dsmlab_acceptance";
        std::filesystem::remove_all(out);
        const std::string cmd = std::string(DSMLAB_BINARY) + " verify --seed 1 --out " + out.string() + " > " +
                                (out.string() + ".log") + " 2>&1";
        const auto start = std::chrono::steady_clock::now();
        const int status = std::system(cmd.c_str());
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        Outcome o{code == 0, "verify exit " + std::to_string(code)};
        const auto r = run_verify(default_config("verify", 1));
        for (const char* name : {"negative_control[e4 c2-scale]", "negative_control[e1 esm-target]"}) {
            bool found = false;
            for (const auto& a : r.assertions) {
                found = found || (a.name == name && a.passed);
            }
            o = require_count(o, found, std::string(name) + " not satisfied");
        }
        report(9, "oracle integrity and negative controls", with_runtime(o, seconds, 300));
    }

    std::cout << (failures == 0 ? "all criteria pass" : std::to_string(failures) + " criterion(s) failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
