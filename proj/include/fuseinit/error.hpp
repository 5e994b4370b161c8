#pragma once

#include <stdexcept>
#include <string>

namespace fuseinit {

/// Failure categories; the numeric values double as CLI exit codes.
enum class ErrorKind { usage = 1, data = 2, numerical = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Malformed configuration, fusion plan, or command line.
struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

/// Input rejected: shape mismatch, bad file, too few samples.
struct DataError : Error {
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Divergent training or an unsolvable moment system.
struct NumericalError : Error {
    explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

}  // namespace fuseinit
