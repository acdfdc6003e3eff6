// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace cirforge {

/// Base class for all errors raised by the toolkit.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Unreadable files, missing sidecars, filesystem failures.
class IoError : public Error {
public:
    using Error::Error;
};

/// A remote backend returned a non-success status or a malformed body.
/// The raw payload is preserved for debugging.
class BackendError : public Error {
public:
    BackendError(const std::string& what, std::string payload)
        : Error(what), payload_(std::move(payload)) {}
    const std::string& payload() const { return payload_; }

private:
    std::string payload_;
};

/// Manifest integrity failures (dangling endpoints and the like).
class IntegrityError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration values or unparsable config files.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Structured parse failure with a machine-readable code, used when
/// interpreting backend responses. `code` is stable, `what` is for humans.
class ParseError : public Error {
public:
    ParseError(std::string code, const std::string& what, std::string raw = {})
        : Error(what), code_(std::move(code)), raw_(std::move(raw)) {}
    const std::string& code() const { return code_; }
    const std::string& raw() const { return raw_; }

private:
    std::string code_;
    std::string raw_;
};

/// Raised when a caption has no locatable span for the requested kind.
class UnperturbableError : public Error {
public:
    using Error::Error;
};

/// An operation was called with inputs violating its stated preconditions.
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Raised when inversion reconstruction error exceeds the configured
/// tolerance. Callers treat it as a skip, not an abort.
class InversionQualityError : public Error {
public:
    InversionQualityError(const std::string& what, double error, double tolerance)
        : Error(what), error_(error), tolerance_(tolerance) {}
    double reconstruction_error() const { return error_; }
    double tolerance() const { return tolerance_; }

private:
    double error_;
    double tolerance_;
};

/// Generation backend failure with the edit context attached.
class GenerationError : public Error {
public:
    using Error::Error;
};

/// Non-finite loss or other trainer failures.
class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace cirforge
