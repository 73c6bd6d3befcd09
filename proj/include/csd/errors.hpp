#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace csd {

// Base class for every failure the library reports. Subclasses name the
// contract that was violated; messages carry the offending values.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidParameter : Error {
    using Error::Error;
};

struct UnnormalizedRotation : Error {
    using Error::Error;
};

struct SingularCovariance : Error {
    using Error::Error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// Malformed file contents. `offset` is the byte position where parsing failed.
struct FormatError : Error {
    FormatError(const std::string& what, std::size_t offset)
        : Error(what + " (byte offset " + std::to_string(offset) + ")"), offset(offset) {}
    std::size_t offset;
};

struct InvalidCondition : Error {
    using Error::Error;
};

struct RejectedStep : Error {
    using Error::Error;
};

struct GenerationMismatch : Error {
    using Error::Error;
};

struct InvalidDistribution : Error {
    using Error::Error;
};

struct EmptyCloud : Error {
    using Error::Error;
};

struct DegenerateField : Error {
    using Error::Error;
};

struct InvalidField : Error {
    using Error::Error;
};

struct DivergedFit : Error {
    using Error::Error;
};

}  // namespace csd
