#pragma once

#include <stdexcept>
#include <string>

namespace dlab {

// Bad run configuration: unknown keys, invalid group names, malformed specs.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Bad data fed to an operation: shape mismatches, out-of-range indices,
// empty batches, unreadable files.
struct DataError : std::invalid_argument {
    explicit DataError(const std::string& what) : std::invalid_argument(what) {}
};

// A numerical contract was violated: non-finite values where finiteness is
// required, non-scalar loss, mismatched model pairs.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// A structural invariant the library itself maintains was broken.
struct InternalError : std::logic_error {
    explicit InternalError(const std::string& what) : std::logic_error(what) {}
};

// Unparseable serialized payloads: bad magic, truncated tensors.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dlab
