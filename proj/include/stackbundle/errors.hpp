#pragma once

#include <stdexcept>
#include <string>

namespace stackbundle {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct RegistryError : Error { using Error::Error; };
struct BundleError : Error { using Error::Error; };
struct LineageError : Error { using Error::Error; };
struct StorageError : Error { using Error::Error; };
struct JobError : Error { using Error::Error; };
struct ProtocolError : Error { using Error::Error; };
struct FramingError : ProtocolError { using ProtocolError::ProtocolError; };
struct StateError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

} // namespace stackbundle
