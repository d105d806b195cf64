#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace apcir {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input text. Line and column are 1-based; 0 means unknown.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line, std::size_t column = 0);

    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t line_;
    std::size_t column_;
};

/// Well-formed input that violates the documented schema or a type invariant.
class SchemaError : public Error {
public:
    using Error::Error;
};

/// Two inputs claim the same key.
class ConflictError : public Error {
public:
    using Error::Error;
};

/// Bad argument to an operation (out of range index, invalid step, ...).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Failure talking to an external service.
class BackendError : public Error {
public:
    using Error::Error;
};

/// Pipeline failure tagged with the stage that produced it.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what);

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace apcir
