#pragma once

#include <stdexcept>
#include <string>

namespace hyperx {

// Thrown on dimension/shape mismatches; message names both shapes.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Violated API contract (non-scalar loss, missing optimizer state, ...).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// An op produced NaN/Inf. Completed tensors are always finite, so this fires
// at the op that first went bad.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Unknown task/language/layer index or name.
struct LookupError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration (maps to CLI exit code 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input file (CoNLL, config); message carries the line number.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Data-level violations: contamination, vocabulary overflow, degenerate batches.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Filesystem/serialization failures.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace hyperx
