#pragma once

#include <stdexcept>
#include <string>

namespace opfmeta {

// Root of every error raised by the library. The CLI maps subclasses onto
// process exit codes, so keep the hierarchy shallow.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class UnsupportedError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class InvalidRange : public Error {
public:
    using Error::Error;
};

class EmptyDataset : public Error {
public:
    using Error::Error;
};

class EmptyBatch : public Error {
public:
    using Error::Error;
};

class NonpositiveBaseline : public Error {
public:
    using Error::Error;
};

class InvalidPerturbation : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

inline void require_dims(std::size_t got, std::size_t want, const char* what)
{
    if (got != want)
        throw DimensionMismatch(std::string(what) + ": expected length " + std::to_string(want) +
                                ", got " + std::to_string(got));
}

} // namespace opfmeta
