#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pairloc {

// Every error raised by the library derives from Error so callers can catch
// the whole family in one place. The subclasses map onto CLI exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad or inconsistent user configuration (exit code 1).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed input text. Carries the 1-based line number of the offending row.
class ParseError : public Error {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& what);

    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

// Input parsed fine but violates a data invariant (duplicate ids, too few
// measurements, schema mismatch).
class IntegrityError : public Error {
public:
    using Error::Error;
};

class InvalidCoordinateError : public Error {
public:
    using Error::Error;
};

class SingularityError : public Error {
public:
    using Error::Error;
};

// Samples fed to a tracker out of event-time order.
class OrderingError : public Error {
public:
    using Error::Error;
};

// Tracker queried before it holds a state.
class NoEstimateError : public Error {
public:
    using Error::Error;
};

class NoGuessError : public Error {
public:
    using Error::Error;
};

class LookupError : public Error {
public:
    using Error::Error;
};

class ScoringError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace pairloc
