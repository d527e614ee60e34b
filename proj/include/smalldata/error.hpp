#pragma once

#include <stdexcept>
#include <string>

namespace smalldata {

/// Base of every error raised by the library. Callers that only need a
/// message can catch this; the subclasses let tests and the CLI tell the
/// failure families apart.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class GeometryError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class StratificationError : public Error {
public:
    using Error::Error;
};

class BalanceError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class MetricError : public Error {
public:
    using Error::Error;
};

class ProtocolError : public Error {
public:
    using Error::Error;
};

class TrainerError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace smalldata
