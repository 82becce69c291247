#pragma once

#include <stdexcept>
#include <string>

namespace cogsem {

/// Error categories. The CLI maps each category to its own exit code.
enum class ErrorKind {
    contract = 2,   // precondition violated by the caller
    shape = 3,      // tensor shapes disagree
    numeric = 4,    // non-finite values
    load = 5,       // a file could not be read or decoded
    io = 6,         // a file could not be written
    validation = 7, // a manifest or dataset breaks an invariant
    dependency = 8, // a prerequisite artifact is missing
    config = 9,     // config schema or cross-field check failed
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

#define COGSEM_DEFINE_ERROR(Name, Kind)                                          \
    class Name : public Error {                                                  \
    public:                                                                      \
        explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
    };

COGSEM_DEFINE_ERROR(ContractError, contract)
COGSEM_DEFINE_ERROR(ShapeError, shape)
COGSEM_DEFINE_ERROR(NumericError, numeric)
COGSEM_DEFINE_ERROR(LoadError, load)
COGSEM_DEFINE_ERROR(IoError, io)
COGSEM_DEFINE_ERROR(ValidationError, validation)
COGSEM_DEFINE_ERROR(DependencyError, dependency)
COGSEM_DEFINE_ERROR(ConfigError, config)

#undef COGSEM_DEFINE_ERROR

} // namespace cogsem
