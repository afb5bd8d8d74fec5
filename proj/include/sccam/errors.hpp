#pragma once

#include <stdexcept>
#include <string>

namespace sccam {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor/layer dimension mismatches. Messages name the offending axis.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

/// Invalid configuration values, unknown keys, unresolvable paths.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

/// Data-domain problems: bad CSV cells, insufficient pools, absent classes,
/// out-of-range labels or sample indices.
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error("data error: " + msg) {}
};

/// API misuse: non-scalar loss, backward called twice, loss on a foreign tape.
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error("contract error: " + msg) {}
};

/// Unreadable, corrupt or version-mismatched checkpoint/dataset files.
struct SerializationError : Error {
    explicit SerializationError(const std::string& msg) : Error("serialization error: " + msg) {}
};

} // namespace sccam
