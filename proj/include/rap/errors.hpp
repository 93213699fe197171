#pragma once

#include <stdexcept>
#include <string>

namespace rap {

// Shape disagreement between a mask/table and the model spec.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

// Integer arithmetic left the 64-bit byte range.
struct OverflowError : std::runtime_error {
    explicit OverflowError(const std::string& what) : std::runtime_error(what) {}
};

// Bad config file contents or violated config invariant.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Caller broke an API precondition (e.g. illegal action).
struct ContractError : std::logic_error {
    explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace rap
