// params.hpp
//
// Flat parameter storage with a named segment layout.

#pragma once

#include <string>
#include <utility>

#include "dsmlab/core.hpp"

namespace dsmlab {

struct Segment {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;

    bool operator==(const Segment&) const = default;
};

/// Flat real parameters; the segments partition [0, values.size()) in order.
class ParamVector {
public:
    ParamVector() = default;

    ParamVector(Vec values, std::vector<Segment> layout) : values_(std::move(values)), layout_(std::move(layout)) {
        std::size_t expected = 0;
        for (const auto& s : layout_) {
            require(s.offset == expected, "ParamVector: segment '" + s.name + "' leaves a gap or overlaps");
            expected += s.size;
        }
        require(expected == values_.size(), "ParamVector: segments do not cover the values");
    }

    /// Zero-initialized parameters with segments laid out in the given order.
    static ParamVector zeros(const std::vector<std::pair<std::string, std::size_t>>& names_and_sizes) {
        std::vector<Segment> layout;
        std::size_t offset = 0;
        for (const auto& [name, size] : names_and_sizes) {
            layout.push_back({name, offset, size});
            offset += size;
        }
        return ParamVector(Vec(offset, 0.0), std::move(layout));
    }

    std::size_t size() const { return values_.size(); }
    const Vec& values() const { return values_; }
    Vec& values() { return values_; }
    const std::vector<Segment>& layout() const { return layout_; }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    const Segment& segment(const std::string& name) const {
        for (const auto& s : layout_) {
            if (s.name == name) {
                return s;
            }
        }
        throw std::invalid_argument("ParamVector: no segment named '" + name + "'");
    }

    std::span<double> view(const std::string& name) {
        const auto& s = segment(name);
        return std::span<double>(values_).subspan(s.offset, s.size);
    }

    ConstSpan view(const std::string& name) const {
        const auto& s = segment(name);
        return ConstSpan(values_).subspan(s.offset, s.size);
    }

    /// Same layout, new values.
    ParamVector with_values(Vec values) const { return ParamVector(std::move(values), layout_); }

    /// "segment[i]" for every coordinate, in flattening order.
    std::vector<std::string> coordinate_names() const {
        std::vector<std::string> out;
        out.reserve(size());
        for (const auto& s : layout_) {
            for (std::size_t i = 0; i < s.size; ++i) {
                out.push_back(s.name + "[" + std::to_string(i) + "]");
            }
        }
        return out;
    }

private:
    Vec values_;
    std::vector<Segment> layout_;
};

}  // namespace dsmlab
