#pragma once

#include <stdexcept>
#include <string>

namespace tdlm {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class ParameterError : public Error { using Error::Error; };
class IndexError : public Error { using Error::Error; };
class ValidationError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class VersionError : public Error { using Error::Error; };
class DataError : public Error { using Error::Error; };

} // namespace tdlm
