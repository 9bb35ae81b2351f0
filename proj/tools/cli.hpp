// tools/cli.hpp
//
// Commands behind the dsmlab executable: verify, run and report.
//
// Run directory layout:
//   <out>/<name>_seed<seed>/manifest.json
//   <out>/<name>_seed<seed>/<scenario>/report.json and CSV artifacts
// where <name> is verify, all or a scenario id.
//
// Config file (INI, flags win over it):
//   [run]        seed, out, jobs, family, inject_fault
//   [experiment] dim, samples, configurations, probes, schedule = 0.3,1.0
//   [optimizer]  method, step_size, beta1, beta2, epsilon, steps, batch, ema_decay
//   [tolerance]  se_multiplier, floor, closed_form
//
// Exit codes: 0 success, 1 assertion or integrity failure, 2 usage error.

#pragma once

#include <atomic>
#include <chrono>
#include <ctime>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <thread>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/evp.h>

#include "dsmlab.hpp"

namespace dsmlab::cli {

inline constexpr const char* kToolName = "dsmlab";
inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kOutEnv = "DSMLAB_OUT";

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IntegrityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::size_t> jobs;
    std::optional<std::string> config;
    std::optional<std::string> family;
    std::optional<std::string> fault;
};

// ---------------------------------------------------------------------------
// Digests and timestamps.

inline std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IntegrityError("cannot read " + path.string());
    }
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256: digest initialization failed");
    }
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) {
        hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    }
    return hex.str();
}

inline std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// ---------------------------------------------------------------------------
// Configuration.

using Ini = boost::property_tree::ptree;

inline Ini load_ini(const std::optional<std::string>& path) {
    Ini ini;
    if (!path) {
        return ini;
    }
    try {
        boost::property_tree::read_ini(*path, ini);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw UsageError("config: " + std::string(e.what()));
    }
    static const std::map<std::string, std::set<std::string>> known = {
        {"run", {"seed", "out", "jobs", "family", "inject_fault"}},
        {"experiment", {"dim", "samples", "configurations", "probes", "schedule"}},
        {"optimizer", {"method", "step_size", "beta1", "beta2", "epsilon", "steps", "batch", "ema_decay"}},
        {"tolerance", {"se_multiplier", "floor", "closed_form"}}};
    for (const auto& [section, body] : ini) {
        const auto it = known.find(section);
        if (it == known.end() || body.data().size() > 0) {
            throw UsageError("config: unknown section '" + section + "'");
        }
        for (const auto& [key, value] : body) {
            if (!it->second.count(key)) {
                throw UsageError("config: unknown key '" + section + "." + key + "'");
            }
        }
    }
    return ini;
}

template <class T>
std::optional<T> ini_get(const Ini& ini, const std::string& key) {
    const auto raw = ini.get_optional<std::string>(key);
    if (!raw) {
        return std::nullopt;
    }
    try {
        if constexpr (std::is_same_v<T, std::string>) {
            return detail::trim(*raw);
        } else if constexpr (std::is_floating_point_v<T>) {
            return detail::parse_real(detail::trim(*raw));
        } else {
            const std::string s = detail::trim(*raw);
            std::size_t used = 0;
            const unsigned long long v = std::stoull(s, &used);
            if (used != s.size() || s.starts_with('-')) {
                throw std::invalid_argument(s);
            }
            return static_cast<T>(v);
        }
    } catch (const std::exception&) {
        throw UsageError("config: bad value for '" + key + "': '" + *raw + "'");
    }
}

template <class T>
void apply(const Ini& ini, const std::string& key, T& target) {
    if (auto v = ini_get<T>(ini, key)) {
        target = *v;
    }
}

inline std::uint64_t resolved_seed(const Options& opts, const Ini& ini) {
    return opts.seed.value_or(ini_get<std::uint64_t>(ini, "run.seed").value_or(1));
}

inline std::filesystem::path resolved_out(const Options& opts, const Ini& ini) {
    if (opts.out) {
        return *opts.out;
    }
    if (auto v = ini_get<std::string>(ini, "run.out")) {
        return *v;
    }
    if (const char* env = std::getenv(kOutEnv); env && *env) {
        return env;
    }
    return "runs";
}

inline std::size_t resolved_jobs(const Options& opts, const Ini& ini) {
    const std::size_t jobs = opts.jobs.value_or(ini_get<std::size_t>(ini, "run.jobs").value_or(1));
    if (jobs == 0) {
        throw UsageError("--jobs must be >= 1");
    }
    return jobs;
}

/// Scenario defaults, then the config file, then flags.
inline ExperimentConfig resolve_config(const std::string& scenario, const Options& opts, const Ini& ini) {
    ExperimentConfig c = default_config(scenario, resolved_seed(opts, ini));
    apply(ini, "experiment.dim", c.dim);
    apply(ini, "experiment.samples", c.samples);
    apply(ini, "experiment.configurations", c.configurations);
    apply(ini, "experiment.probes", c.probes);
    if (auto s = ini_get<std::string>(ini, "experiment.schedule")) {
        Vec sigmas;
        try {
            for (const auto& part : detail::split(*s, ',')) {
                sigmas.push_back(detail::parse_real(detail::trim(part)));
            }
            c.schedule = NoiseSchedule(sigmas);
        } catch (const std::exception& e) {
            throw UsageError("config: bad schedule '" + *s + "': " + e.what());
        }
    }
    if (auto m = ini_get<std::string>(ini, "optimizer.method")) {
        try {
            c.optimizer.method = parse_method(*m);
        } catch (const std::exception& e) {
            throw UsageError(std::string("config: ") + e.what());
        }
    }
    apply(ini, "optimizer.step_size", c.optimizer.step_size);
    apply(ini, "optimizer.beta1", c.optimizer.beta1);
    apply(ini, "optimizer.beta2", c.optimizer.beta2);
    apply(ini, "optimizer.epsilon", c.optimizer.epsilon);
    apply(ini, "optimizer.steps", c.optimizer.steps);
    apply(ini, "optimizer.batch", c.optimizer.batch);
    apply(ini, "optimizer.ema_decay", c.optimizer.ema_decay);
    apply(ini, "tolerance.se_multiplier", c.tolerance.se_multiplier);
    apply(ini, "tolerance.floor", c.tolerance.floor);
    apply(ini, "tolerance.closed_form", c.tolerance.closed_form);
    apply(ini, "run.family", c.family);
    if (opts.family) {
        c.family = *opts.family;
    }
    std::string fault = to_string(c.fault);
    apply(ini, "run.inject_fault", fault);
    if (opts.fault) {
        fault = *opts.fault;
    }
    try {
        c.fault = parse_fault(fault);
        c.validate();
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
    return c;
}

// ---------------------------------------------------------------------------
// Execution.

inline void print_table(std::ostream& os, const std::vector<ExperimentReport>& reports) {
    const auto precision = os.precision();
    os << std::left << std::setw(10) << "scenario" << std::setw(8) << "verdict" << std::right << std::setw(8)
       << "passed" << std::setw(8) << "failed" << std::setw(8) << "skipped" << std::setw(10) << "seconds"
       << "  first failure\n";
    for (const auto& r : reports) {
        std::size_t skipped = 0;
        for (const auto& a : r.assertions) {
            skipped += a.skipped ? 1 : 0;
        }
        const auto* bad = r.first_failure();
        os << std::left << std::setw(10) << r.scenario << std::setw(8) << (r.passed ? "PASS" : "FAIL") << std::right
           << std::setw(8) << r.count(true) << std::setw(8) << r.count(false) << std::setw(8) << skipped
           << std::setw(10) << std::fixed << std::setprecision(2) << r.seconds << std::defaultfloat << "  "
           << (bad ? bad->name + ": " + bad->detail : "-") << "\n";
    }
    os.precision(precision);
}

/// Runs `ids` into <out>/<name>_seed<seed>, writes the manifest and prints
/// the summary table.
inline int execute(const std::string& name, const std::vector<std::string>& ids, const Options& opts,
                   std::ostream& os) {
    const Ini ini = load_ini(opts.config);
    const std::uint64_t seed = resolved_seed(opts, ini);
    const std::size_t jobs = resolved_jobs(opts, ini);
    std::vector<ExperimentConfig> configs;
    for (const auto& id : ids) {
        configs.push_back(resolve_config(id, opts, ini));
    }
    const std::filesystem::path dir = resolved_out(opts, ini) / run_dir_name(name, seed);
    std::filesystem::create_directories(dir);
    std::filesystem::remove(dir / "manifest.json");
    std::filesystem::remove(dir / "merged.csv");
    for (const auto& id : ids) {
        std::filesystem::remove_all(dir / id);
    }

    const std::string started = utc_now();
    std::vector<ExperimentReport> reports(ids.size());
    std::vector<std::exception_ptr> errors(ids.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < ids.size(); i = next++) {
            try {
                reports[i] = run_scenario(configs[i], ArtifactSink(dir / ids[i]));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < std::min(jobs, ids.size()); ++t) {
            pool.emplace_back(worker);
        }
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    const std::string finished = utc_now();

    nlohmann::json files = nlohmann::json::array();
    std::vector<std::filesystem::path> paths;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file()) {
            paths.push_back(std::filesystem::relative(entry.path(), dir));
        }
    }
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) {
        if (p == "manifest.json" || p == "merged.csv") {
            continue;
        }
        files.push_back({{"path", p.generic_string()},
                         {"bytes", std::filesystem::file_size(dir / p)},
                         {"sha256", sha256_file(dir / p)}});
    }
    nlohmann::json resolved = nlohmann::json::object(), scenarios = nlohmann::json::array();
    bool all_passed = true;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        resolved[ids[i]] = configs[i].to_json();
        scenarios.push_back({{"id", ids[i]},
                             {"verdict", reports[i].passed ? "pass" : "fail"},
                             {"seconds", reports[i].seconds}});
        all_passed = all_passed && reports[i].passed;
    }
    const nlohmann::json manifest = {{"tool", kToolName},
                                     {"version", kToolVersion},
                                     {"command", name},
                                     {"seed", seed},
                                     {"jobs", jobs},
                                     {"started", started},
                                     {"finished", finished},
                                     {"config", resolved},
                                     {"scenarios", scenarios},
                                     {"files", files}};
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";

    print_table(os, reports);
    os << "run directory: " << dir.string() << "\n";
    for (const auto& r : reports) {
        if (const auto* bad = r.first_failure()) {
            os << "first failing assertion: " << r.scenario << "." << bad->name << " (" << bad->detail << ")\n";
            break;
        }
    }
    return all_passed ? kOk : kFailure;
}

inline int cmd_verify(const Options& opts, std::ostream& os = std::cout) {
    return execute("verify", {"verify"}, opts, os);
}

inline int cmd_run(const std::string& scenario, const Options& opts, std::ostream& os = std::cout) {
    if (scenario == "all") {
        return execute("all", scenario_ids(), opts, os);
    }
    if (!is_scenario(scenario)) {
        throw UsageError("unknown scenario '" + scenario + "' (expected e1..e6 or all)");
    }
    return execute(scenario, {scenario}, opts, os);
}

// ---------------------------------------------------------------------------
// Report.

/// Headline numbers per scenario, as JSON pointers into measurements.
inline const std::map<std::string, std::vector<std::string>>& key_numbers() {
    static const std::map<std::string, std::vector<std::string>> keys = {
        {"e1", {"/linear_max_abs_gradient_difference", "/probe_rms_between"}},
        {"e2",
         {"/gaussian_dsm_score_norm_first50", "/gaussian_dsm_score_norm_last50", "/gaussian_s_final",
          "/mixture_weight_final"}},
        {"e3", {"/dsm_final/u", "/esm_final/u", "/dsm_final/m", "/mode_reached"}},
        {"e4", {"/linear_max_abs_residual"}},
        {"e5", {"/target", "/slope"}},
        {"e6", {"/quadrature_cross_term"}},
        {"verify", {"/e4/linear_max_abs_residual", "/e5/slope"}}};
    return keys;
}

/// Splits one CSV line; fields may be double-quoted.
inline std::vector<std::string> csv_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (char ch : line) {
        if (ch == '"') {
            quoted = !quoted;
        } else if (ch == ',' && !quoted) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char ch : s) {
        out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    }
    return out + "\"";
}

/// Verifies the manifest's digests, prints the verdict table with headline
/// numbers and writes merged.csv (scenario,file,row,column,value).
inline int cmd_report(const std::filesystem::path& dir, std::ostream& os = std::cout) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::is_regular_file(manifest_path)) {
        throw IntegrityError("no manifest.json in " + dir.string());
    }
    nlohmann::json manifest;
    try {
        std::ifstream in(manifest_path);
        manifest = nlohmann::json::parse(in);
        if (!manifest.at("files").is_array() || !manifest.at("scenarios").is_array()) {
            throw std::runtime_error("files and scenarios must be arrays");
        }
    } catch (const std::exception& e) {
        throw IntegrityError("corrupt manifest " + manifest_path.string() + ": " + e.what());
    }
    for (const auto& f : manifest["files"]) {
        const std::string rel = f.at("path").get<std::string>();
        if (!std::filesystem::is_regular_file(dir / rel)) {
            throw IntegrityError("missing file " + rel);
        }
        if (sha256_file(dir / rel) != f.at("sha256").get<std::string>()) {
            throw IntegrityError("digest mismatch on " + rel);
        }
    }

    std::vector<ExperimentReport> reports;
    std::vector<nlohmann::json> measurements;
    for (const auto& s : manifest["scenarios"]) {
        const std::string id = s.at("id").get<std::string>();
        std::ifstream in(dir / id / "report.json");
        if (!in) {
            throw IntegrityError("missing report " + id + "/report.json");
        }
        const auto j = nlohmann::json::parse(in);
        ExperimentReport r{id, j.at("seed").get<std::uint64_t>()};
        for (const auto& a : j.at("assertions")) {
            r.assertions.push_back({a.at("name"), a.at("passed"), a.at("skipped"), a.at("detail")});
            r.passed = r.passed && a.at("passed").get<bool>();
        }
        r.seconds = s.value("seconds", 0.0);
        reports.push_back(std::move(r));
        measurements.push_back(j.at("measurements"));
    }
    print_table(os, reports);
    os << "\nkey numbers\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto it = key_numbers().find(reports[i].scenario);
        if (it == key_numbers().end()) {
            continue;
        }
        for (const auto& ptr : it->second) {
            const nlohmann::json::json_pointer p(ptr);
            if (measurements[i].contains(p) && measurements[i][p].is_number()) {
                os << "  " << std::left << std::setw(8) << reports[i].scenario << std::setw(40) << ptr.substr(1)
                   << measurements[i][p].get<double>() << "\n";
            }
        }
    }

    std::ofstream merged(dir / "merged.csv");
    merged << "scenario,file,row,column,value\n";
    std::size_t rows = 0;
    for (const auto& f : manifest["files"]) {
        const std::filesystem::path rel = f.at("path").get<std::string>();
        if (rel.extension() != ".csv") {
            continue;
        }
        const std::string scenario = rel.begin()->string();
        std::ifstream in(dir / rel);
        std::string line;
        if (!std::getline(in, line)) {
            continue;
        }
        const auto header = csv_fields(line);
        for (std::size_t row = 0; std::getline(in, line); ++row) {
            const auto cells = csv_fields(line);
            for (std::size_t c = 0; c < cells.size() && c < header.size(); ++c) {
                merged << scenario << ',' << csv_quote(rel.filename().string()) << ',' << row << ','
                       << csv_quote(header[c]) << ',' << csv_quote(cells[c]) << "\n";
                ++rows;
            }
        }
    }
    os << "\nmerged " << rows << " cells into " << (dir / "merged.csv").string() << "\n";
    bool ok = true;
    for (const auto& r : reports) {
        ok = ok && r.passed;
    }
    return ok ? kOk : kFailure;
}

}  // namespace dsmlab::cli
