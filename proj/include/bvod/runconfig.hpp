#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bvod/error.hpp"
#include "bvod/factors.hpp"
#include "bvod/imagegen.hpp"
#include "bvod/selection.hpp"
#include "bvod/vae.hpp"

namespace bvod {

namespace detail {

inline std::string trim(const std::string& s) {
    const std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const std::size_t comma = s.find(',', start);
        const std::size_t end = comma == std::string::npos ? s.size() : comma;
        out.push_back(trim(s.substr(start, end - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

inline double parse_double(const std::string& key, const std::string& s) {
    const std::string v = trim(s);
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError("key '" + key + "': '" + v + "' is not a number");
    return out;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& s) {
    const std::string v = trim(s);
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError("key '" + key + "': '" + v + "' is not a non-negative integer");
    return out;
}

}  // namespace detail

/// Parsed key = value run configuration. Unknown keys are rejected by name;
/// every field has a usable default.
struct RunConfig {
    std::string factor = "time-of-day";
    std::string in_distribution = "day";
    std::map<std::string, std::string> pins;  // pin.<factor> entries

    std::size_t n_train = 1000;
    std::size_t n_validation = 200;
    std::size_t n_test1 = 100;
    std::size_t n_test2 = 100;
    std::uint64_t seed = 0;

    std::vector<double> betas = {1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9};
    std::vector<std::size_t> n_latents = {5, 10, 20, 30};
    std::vector<std::size_t> hidden = {256, 64};
    double learning_rate = 1e-3;
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    int percentile = 75;

    PartitionSpec partition_spec() const {
        PartitionSpec spec;
        spec.factor = factor;
        spec.in_dist_value = in_distribution;
        spec.pinned = pins;
        spec.n_train = n_train;
        spec.n_validation = n_validation;
        spec.n_test1 = n_test1;
        spec.n_test2 = n_test2;
        spec.seed = seed;
        return spec;
    }

    VaeConfig vae_config() const {
        VaeConfig cfg;
        cfg.hidden = hidden;
        cfg.learning_rate = learning_rate;
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.seed = seed;
        return cfg;
    }

    SweepGrid sweep_grid() const { return {betas, n_latents}; }
};

/// Parses `key = value` text: one pair per line, '#' starts a comment, blank
/// lines are skipped. Unknown and repeated keys raise ConfigError.
inline RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;

        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        if (value.empty())
            throw ConfigError("key '" + key + "': empty value");
        if (!seen.insert(key).second)
            throw ConfigError("key '" + key + "' given more than once");

        if (key == "factor") {
            cfg.factor = value;
        } else if (key == "in_distribution") {
            cfg.in_distribution = value;
        } else if (key == "n_train") {
            cfg.n_train = static_cast<std::size_t>(detail::parse_u64(key, value));
        } else if (key == "n_validation") {
            cfg.n_validation = static_cast<std::size_t>(detail::parse_u64(key, value));
        } else if (key == "n_test1") {
            cfg.n_test1 = static_cast<std::size_t>(detail::parse_u64(key, value));
        } else if (key == "n_test2") {
            cfg.n_test2 = static_cast<std::size_t>(detail::parse_u64(key, value));
        } else if (key == "seed") {
            cfg.seed = detail::parse_u64(key, value);
        } else if (key == "betas") {
            cfg.betas.clear();
            for (const std::string& item : detail::split_list(value))
                cfg.betas.push_back(detail::parse_double(key, item));
        } else if (key == "nlatents") {
            cfg.n_latents.clear();
            for (const std::string& item : detail::split_list(value)) {
                const std::uint64_t n = detail::parse_u64(key, item);
                if (n == 0) throw ConfigError("key 'nlatents': latent count must be positive");
                cfg.n_latents.push_back(static_cast<std::size_t>(n));
            }
        } else if (key == "hidden") {
            cfg.hidden.clear();
            for (const std::string& item : detail::split_list(value)) {
                const std::uint64_t n = detail::parse_u64(key, item);
                if (n == 0) throw ConfigError("key 'hidden': layer width must be positive");
                cfg.hidden.push_back(static_cast<std::size_t>(n));
            }
        } else if (key == "learning_rate") {
            cfg.learning_rate = detail::parse_double(key, value);
            if (cfg.learning_rate <= 0.0)
                throw ConfigError("key 'learning_rate': must be positive");
        } else if (key == "epochs") {
            cfg.epochs = static_cast<std::size_t>(detail::parse_u64(key, value));
        } else if (key == "batch_size") {
            cfg.batch_size = static_cast<std::size_t>(detail::parse_u64(key, value));
            if (cfg.batch_size == 0) throw ConfigError("key 'batch_size': must be positive");
        } else if (key == "percentile") {
            const std::uint64_t p = detail::parse_u64(key, value);
            if (p < 1 || p > 100)
                throw ConfigError("key 'percentile': " + value + " outside [1, 100]");
            cfg.percentile = static_cast<int>(p);
        } else if (key.rfind("pin.", 0) == 0) {
            const std::string pinned_factor = key.substr(4);
            factor_def(pinned_factor);  // rejects unknown factor names
            if (!is_factor_value(pinned_factor, value))
                throw ConfigError("key '" + key + "': '" + value + "' is not a value of '" +
                                  pinned_factor + "'");
            cfg.pins[pinned_factor] = value;
        } else {
            throw ConfigError("unknown configuration key '" + key + "'");
        }
    }

    factor_def(cfg.factor);
    if (!is_factor_value(cfg.factor, cfg.in_distribution))
        throw ConfigError("in_distribution '" + cfg.in_distribution +
                          "' is not a value of factor '" + cfg.factor + "'");
    if (cfg.pins.count(cfg.factor))
        throw ConfigError("factor '" + cfg.factor + "' cannot also be pinned");
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

}  // namespace bvod
