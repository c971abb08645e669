#pragma once

#include <stdexcept>
#include <string>

namespace pgcnet {

/// Failure categories. The CLI maps each to a distinct exit code.
enum class ErrorCategory {
    kShape,
    kParameter,
    kConfig,
    kData,
    kFormat,
    kNumerical,
    kIo,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& what) : Error(ErrorCategory::kShape, what) {}
};

struct ParameterError : Error {
    explicit ParameterError(const std::string& what) : Error(ErrorCategory::kParameter, what) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(ErrorCategory::kConfig, what) {}
};

struct DataError : Error {
    explicit DataError(const std::string& what) : Error(ErrorCategory::kData, what) {}
};

/// Malformed file contents. `offset` is the byte position where parsing stopped.
struct FormatError : Error {
    FormatError(const std::string& what, long offset = -1)
        : Error(ErrorCategory::kFormat,
                offset >= 0 ? what + " (at byte " + std::to_string(offset) + ")" : what),
          offset(offset) {}
    long offset;
};

struct NumericalError : Error {
    explicit NumericalError(const std::string& what) : Error(ErrorCategory::kNumerical, what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error(ErrorCategory::kIo, what) {}
};

}  // namespace pgcnet
