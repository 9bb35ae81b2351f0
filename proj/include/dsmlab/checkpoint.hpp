// checkpoint.hpp
//
// Plain-text key-value checkpoints for the parametric score models.
//
//   format = dsmlab-checkpoint-v1
//   model = linear | mlp
//   dim = <d>
//   condition_dim = <dim(c)>
//   schedule = <sigma_0>,<sigma_1>,...        (linear only)
//   widths = <w_0>,<w_1>,...,<w_L>            (mlp only)
//   segments = <name>:<offset>:<size>;...
//   size = <number of parameters>
//   values = <v_0>,<v_1>,...
//
// Lines starting with '#' and blank lines are ignored. Reals are written
// with 17 significant digits, so save/load round-trips exactly.

#pragma once

#include <charconv>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <variant>

#include "dsmlab/score_models.hpp"

namespace dsmlab {

namespace detail {

inline std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string join_reals(ConstSpan v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) {
            out += ',';
        }
        out += format_real(v[i]);
    }
    return out;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) {
        out.push_back(cur);
    }
    return out;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_real(const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("checkpoint: bad number '" + s + "'");
    }
    require(used == s.size(), "checkpoint: bad number '" + s + "'");
    return v;
}

inline std::size_t parse_size(const std::string& s) {
    std::size_t v = 0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    require(ec == std::errc() && ptr == end, "checkpoint: bad integer '" + s + "'");
    return v;
}

inline Vec parse_reals(const std::string& s) {
    Vec out;
    if (trim(s).empty()) {
        return out;
    }
    for (const auto& p : split(s, ',')) {
        out.push_back(parse_real(trim(p)));
    }
    return out;
}

inline std::string segments_string(const ParamVector& p) {
    std::string out;
    for (std::size_t i = 0; i < p.layout().size(); ++i) {
        const auto& s = p.layout()[i];
        if (i) {
            out += ';';
        }
        out += s.name + ":" + std::to_string(s.offset) + ":" + std::to_string(s.size);
    }
    return out;
}

inline void write_common(std::ostream& os, const char* kind, std::size_t dim, std::size_t cdim) {
    os << "# dsmlab score-model checkpoint\n";
    os << "format = dsmlab-checkpoint-v1\n";
    os << "model = " << kind << "\n";
    os << "dim = " << dim << "\n";
    os << "condition_dim = " << cdim << "\n";
}

inline void write_params(std::ostream& os, const ParamVector& p) {
    os << "segments = " << segments_string(p) << "\n";
    os << "size = " << p.size() << "\n";
    os << "values = " << join_reals(p.values()) << "\n";
}

}  // namespace detail

inline void save_checkpoint(std::ostream& os, const LinearScoreModel& m) {
    detail::write_common(os, "linear", m.dim(), m.condition_dim());
    os << "schedule = " << detail::join_reals(m.schedule().sigmas()) << "\n";
    detail::write_params(os, m.params());
}

inline void save_checkpoint(std::ostream& os, const MlpScoreModel& m) {
    detail::write_common(os, "mlp", m.dim(), m.condition_dim());
    os << "widths = ";
    for (std::size_t i = 0; i < m.widths().size(); ++i) {
        os << (i ? "," : "") << m.widths()[i];
    }
    os << "\n";
    detail::write_params(os, m.params());
}

using AnyCheckpoint = std::variant<LinearScoreModel, MlpScoreModel>;

inline AnyCheckpoint load_checkpoint(std::istream& is) {
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(is, line)) {
        const auto t = detail::trim(line);
        if (t.empty() || t.front() == '#') {
            continue;
        }
        const auto eq = t.find('=');
        require(eq != std::string::npos, "checkpoint: expected 'key = value', got '" + t + "'");
        kv[detail::trim(t.substr(0, eq))] = detail::trim(t.substr(eq + 1));
    }
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        require(it != kv.end(), "checkpoint: missing field '" + key + "'");
        return it->second;
    };
    require(get("format") == "dsmlab-checkpoint-v1", "checkpoint: unknown format '" + get("format") + "'");
    const std::size_t dim = detail::parse_size(get("dim"));
    const std::size_t cdim = detail::parse_size(get("condition_dim"));
    Vec values = detail::parse_reals(get("values"));
    require(values.size() == detail::parse_size(get("size")), "checkpoint: value count does not match size");

    auto check_layout = [&](const ParamVector& expected) {
        require(get("segments") == detail::segments_string(expected), "checkpoint: segment layout mismatch");
    };

    const auto& kind = get("model");
    if (kind == "linear") {
        LinearScoreModel m(NoiseSchedule(detail::parse_reals(get("schedule"))), dim, cdim);
        check_layout(m.params());
        require_same_dim(values.size(), m.params().size(), "checkpoint values");
        m.params().values() = std::move(values);
        return m;
    }
    if (kind == "mlp") {
        std::vector<std::size_t> widths;
        for (const auto& w : detail::split(get("widths"), ',')) {
            widths.push_back(detail::parse_size(detail::trim(w)));
        }
        require(!widths.empty() && widths.back() == dim, "checkpoint: output width must equal dim");
        auto m = MlpScoreModel::from_widths(widths, cdim, std::move(values));
        check_layout(m.params());
        return m;
    }
    throw std::invalid_argument("checkpoint: unknown model kind '" + kind + "'");
}

}  // namespace dsmlab
