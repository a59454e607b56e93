#pragma once

#include <stdexcept>
#include <string>

namespace ckd {

/// Error classes map to CLI exit codes: ConfigError -> 1, DataError -> 2,
/// VerifyError -> 3.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct VerifyError : std::runtime_error {
    explicit VerifyError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace ckd
