// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dualsft/error.hpp"
#include "dualsft/linalg.hpp"

namespace dualsft {

/// Named contiguous block of a flat parameter vector (one layer tensor).
struct Segment {
    std::string name;
    std::size_t offset = 0;
    std::vector<std::size_t> shape;

    std::size_t size() const {
        std::size_t n = 1;
        for (std::size_t s : shape) n *= s;
        return n;
    }
    bool operator==(const Segment&) const = default;
};

/**
 * Flat real vector with an ordered layer layout.
 *
 * The segments are disjoint and tile [0, size()) in order. Update vectors
 * such as a step or a gradient reuse the layout of the point they live at.
 */
class ParameterVector {
public:
    ParameterVector() = default;

    explicit ParameterVector(Vec values)
        : values_(std::move(values)) {
        if (!values_.empty()) segments_.push_back({"theta", 0, {values_.size()}});
    }

    ParameterVector(Vec values, std::vector<Segment> segments)
        : values_(std::move(values)), segments_(std::move(segments)) {
        validate_layout();
    }

    /// Same layout, new values.
    ParameterVector with_values(Vec values) const {
        require(values.size() == values_.size(), "parameter vector length mismatch");
        ParameterVector out;
        out.values_ = std::move(values);
        out.segments_ = segments_;
        return out;
    }

    ParameterVector zeros_like() const { return with_values(Vec(values_.size(), 0.0)); }

    std::size_t size() const { return values_.size(); }
    const Vec& values() const { return values_; }
    Vec& values() { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }

    const std::vector<Segment>& segments() const { return segments_; }

    const Segment& segment(const std::string& name) const {
        for (const auto& s : segments_)
            if (s.name == name) return s;
        throw ConfigError("unknown parameter segment '" + name + "'");
    }

    /// Name of the segment containing coordinate `index`.
    const std::string& segment_of(std::size_t index) const {
        for (const auto& s : segments_)
            if (index >= s.offset && index < s.offset + s.size()) return s.name;
        static const std::string none = "<none>";
        return none;
    }

    /// Throws NumericError naming the first segment that holds a non-finite entry.
    void check_finite(const std::string& what) const { check_finite(values_, what); }

    void check_finite(std::span<const double> v, const std::string& what) const {
        for (std::size_t i = 0; i < v.size(); ++i)
            if (!std::isfinite(v[i]))
                throw NumericError(what + " has a non-finite entry at index " + std::to_string(i) +
                                   " in segment '" + segment_of(i) + "'");
    }

    bool operator==(const ParameterVector&) const = default;

private:
    void validate_layout() const {
        std::size_t next = 0;
        for (const auto& s : segments_) {
            require(s.offset == next, "segment '" + s.name + "' does not start where the previous one ends");
            next += s.size();
        }
        require(next == values_.size(), "segments do not cover the parameter vector");
    }

    Vec values_;
    std::vector<Segment> segments_;
};

} // namespace dualsft
