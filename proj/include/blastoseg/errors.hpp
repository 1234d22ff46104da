#pragma once

#include <stdexcept>
#include <string>

namespace blastoseg {

// Shape or size disagreement between tensors / layers.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid argument value (rate out of range, non-scalar loss, bad threshold, ...).
struct ParameterError : std::runtime_error {
    explicit ParameterError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid model / run configuration.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Dataset problems: missing masks, empty directories, unreadable files.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// NaN/Inf encountered where finite values are required.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Corrupt or incompatible checkpoint / image file.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem level failures.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace blastoseg
