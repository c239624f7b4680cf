#ifndef ALIGNMAP_ERROR_HPP
#define ALIGNMAP_ERROR_HPP

#include <stdexcept>
#include <string>

/**
 * @file error.hpp
 *
 * @brief Exception types thrown by the library.
 */

namespace alignmap {

/**
 * Base class for every error raised by alignmap. The CLI maps any of these to
 * the "data error" exit code.
 */
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/** A precondition on an argument was violated (e.g. `k` out of range). */
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/** Malformed, missing or inconsistent files on disk. */
class FormatError : public Error {
public:
    using Error::Error;
};

/** The layout optimizer produced a non-finite coordinate. */
class OptimizationError : public Error {
public:
    using Error::Error;
};

}

#endif
