#pragma once

#include <stdexcept>
#include <string>

namespace bvod {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration input: bad config file, unknown key, bad flag value.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// Malformed or truncated container file.
struct ContainerError : Error {
    explicit ContainerError(const std::string& msg) : Error(msg) {}
};

/// Non-finite value where a finite one is required (activations, losses,
/// gradients).
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace bvod
