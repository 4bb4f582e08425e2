#pragma once

#include <stdexcept>
#include <string>

namespace subkit {

// Base for all recoverable library errors. The CLI maps these to exit code 2.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad user input on the command line or in a config file (exit code 1 at the CLI).
struct UsageError : Error {
    using Error::Error;
};

// Malformed data, broken invariants, failed validation (exit code 2 at the CLI).
struct DataError : Error {
    using Error::Error;
};

}  // namespace subkit
