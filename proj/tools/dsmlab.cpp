// tools/dsmlab.cpp
//
// dsmlab verify | run {e1..e6|all} | report <run-dir>

#include "CLI11.hpp"

#include "cli.hpp"

namespace {

void add_common(CLI::App* cmd, dsmlab::cli::Options& opts) {
    cmd->add_option("--seed", opts.seed, "Run seed (default 1)");
    cmd->add_option("--out", opts.out, "Output root (default $DSMLAB_OUT, else runs)");
    cmd->add_option("--jobs", opts.jobs, "Scenarios run concurrently (default 1)");
    cmd->add_option("--config", opts.config, "INI config file; flags win over it")->check(CLI::ExistingFile);
    cmd->add_option("--family", opts.family, "E2 family: gaussian | encoder | mixture-weight | all");
    cmd->add_option("--inject-fault", opts.fault, "Negative control: c2-scale | esm-target");
}

}  // namespace

int main(int argc, char** argv) {
    using namespace dsmlab::cli;
    CLI::App app{"Denoising vs explicit score matching: identities and bias experiments"};
    app.set_version_flag("--version", std::string(kToolName) + " " + kToolVersion);
    app.require_subcommand(1);

    Options opts;
    std::string scenario;
    std::string run_dir;
    auto* verify = app.add_subcommand("verify", "Oracle cross-checks, E4-E6 and negative controls");
    add_common(verify, opts);
    auto* run = app.add_subcommand("run", "Run one scenario or all of them");
    run->add_option("scenario", scenario, "e1..e6 or all")->required();
    add_common(run, opts);
    auto* report = app.add_subcommand("report", "Check a run directory and summarize it");
    report->add_option("run_dir", run_dir, "Run directory holding manifest.json")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }
    try {
        if (*verify) {
            return cmd_verify(opts);
        }
        if (*run) {
            return cmd_run(scenario, opts);
        }
        return cmd_report(run_dir);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
}
