#pragma once

#include <stdexcept>
#include <string>

namespace resid {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input violates a documented precondition or type invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// File-system or stream failure.
class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed on-disk data (bad magic, header, or payload).
class FormatError : public Error {
public:
    using Error::Error;
};

/// A numerical computation hit a degenerate case (zero variance, singular refit, ...).
class NumericError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

}  // namespace resid
