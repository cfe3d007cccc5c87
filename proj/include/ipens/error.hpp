#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ipens {

// Root of every error the library raises. `kind()` is a stable machine tag
// used by the CLI error record.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual const char* kind() const noexcept { return "error"; }
};

// Shape disagreement between operands; `axis()` names the offending axis.
class DimensionError : public Error {
public:
    DimensionError(std::string axis, const std::string& what)
        : Error("dimension mismatch on axis '" + axis + "': " + what), axis_(std::move(axis)) {}
    const std::string& axis() const noexcept { return axis_; }
    const char* kind() const noexcept override { return "dimension"; }

private:
    std::string axis_;
};

class AutodiffError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "autodiff"; }
};

class GraphError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "graph"; }
};

class CheckpointError : public Error {
public:
    enum class Reason { Io, BadMagic, VersionMismatch, LengthMismatch, Malformed };

    CheckpointError(Reason reason, const std::string& what) : Error(what), reason_(reason) {}
    Reason reason() const noexcept { return reason_; }
    const char* kind() const noexcept override;

private:
    Reason reason_;
};

// Checkpoint payload holds a different number of values than its header declares.
class CheckpointLengthError : public CheckpointError {
public:
    CheckpointLengthError(std::size_t expected, std::size_t actual);
    std::size_t expected() const noexcept { return expected_; }
    std::size_t actual() const noexcept { return actual_; }

private:
    std::size_t expected_;
    std::size_t actual_;
};

class DataError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "data"; }
};

class TrainingError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "training"; }
};

class MetricsError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "metrics"; }
};

// Invalid arguments supplied by the caller (bad config, degenerate request).
class UsageError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "usage"; }
};

}  // namespace ipens
