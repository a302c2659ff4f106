#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "bvod/error.hpp"
#include "bvod/rng.hpp"

namespace bvod {

/// A generative factor with its two admissible values.
struct FactorDef {
    std::string name;
    std::array<std::string, 2> values;
};

inline const std::vector<FactorDef>& factor_defs() {
    static const std::vector<FactorDef> defs = {
        {"time-of-day", {"day", "night"}},
        {"traffic", {"low", "high"}},
        {"pedestrian", {"none", "present"}},
    };
    return defs;
}

inline const FactorDef& factor_def(const std::string& name) {
    for (const FactorDef& d : factor_defs())
        if (d.name == name) return d;
    throw ConfigError("unknown factor \"" + name + "\"");
}

inline bool is_factor_value(const std::string& factor, const std::string& value) {
    const FactorDef& d = factor_def(factor);
    return value == d.values[0] || value == d.values[1];
}

/// The other admissible value of a two-valued factor.
inline const std::string& complement_value(const std::string& factor, const std::string& value) {
    const FactorDef& d = factor_def(factor);
    if (value == d.values[0]) return d.values[1];
    if (value == d.values[1]) return d.values[0];
    throw ConfigError("unknown value \"" + value + "\" for factor \"" + factor + "\"");
}

/// Factor name to value, one entry per recognized factor.
using FactorLabels = std::map<std::string, std::string>;

inline void validate_labels(const FactorLabels& labels) {
    for (const FactorDef& d : factor_defs()) {
        auto it = labels.find(d.name);
        if (it == labels.end())
            throw ConfigError("labels missing factor \"" + d.name + "\"");
        if (it->second != d.values[0] && it->second != d.values[1])
            throw ConfigError("unknown value \"" + it->second + "\" for factor \"" + d.name + "\"");
    }
    for (const auto& [k, v] : labels) factor_def(k);  // rejects unknown factor names
}

/// Draws every factor independently and uniformly.
inline FactorLabels random_labels(Rng& rng) {
    FactorLabels out;
    for (const FactorDef& d : factor_defs()) out[d.name] = d.values[rng.uniform_int(0, 1)];
    return out;
}

}  // namespace bvod
