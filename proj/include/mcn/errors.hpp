#pragma once

#include <stdexcept>
#include <string>

namespace mcn {

// Error taxonomy mirrored by the CLI exit codes: config 2, data 3, numeric 4.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape/dtype violations. Not a user error class; indicates a bug in
// the calling code, so it stays separate from the exit-code taxonomy.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mcn
