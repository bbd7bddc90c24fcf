#pragma once

#include <stdexcept>
#include <string>

namespace cil {

/// Invalid configuration: bad shapes, bad option values, impossible splits.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (datasets, logs, snapshots).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// File-level parse failure; message names the offending field or line.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Non-finite values where finite ones are required (diverged training etc).
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// API misuse, e.g. backward without a retained forward pass.
struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};

} // namespace cil
