#pragma once

#include <stdexcept>
#include <string>

namespace lgap {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid arguments, configuration, or shapes supplied by the caller.
class ValidationError : public Error {
public:
    using Error::Error;
};

class ShapeError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// On-disk artifact failed integrity checks (checksum, size, version).
class CorruptDataError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

namespace detail {
[[noreturn]] void throw_validation(const std::string& what);
[[noreturn]] void throw_shape(const std::string& what);
}  // namespace detail

inline void require(bool condition, const std::string& what) {
    if (!condition) detail::throw_validation(what);
}

inline void require_shape(bool condition, const std::string& what) {
    if (!condition) detail::throw_shape(what);
}

}  // namespace lgap
