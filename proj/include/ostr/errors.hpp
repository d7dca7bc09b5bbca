#pragma once

#include <stdexcept>
#include <string>

namespace ostr {

// Error categories surfaced through the C API as status codes.
enum class ErrorKind {
    Dimension = 1,
    Degenerate,
    Contract,
    Config,
    Load,
    Length,
    Optimizer,
    Io,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& w) : Error(ErrorKind::Dimension, w) {}
};
struct DegenerateInputError : Error {
    explicit DegenerateInputError(const std::string& w) : Error(ErrorKind::Degenerate, w) {}
};
struct ContractError : Error {
    explicit ContractError(const std::string& w) : Error(ErrorKind::Contract, w) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(ErrorKind::Config, w) {}
};
struct LoadError : Error {
    explicit LoadError(const std::string& w) : Error(ErrorKind::Load, w) {}
};
struct LengthError : Error {
    explicit LengthError(const std::string& w) : Error(ErrorKind::Length, w) {}
};
struct OptimizerError : Error {
    explicit OptimizerError(const std::string& w) : Error(ErrorKind::Optimizer, w) {}
};
struct IoError : Error {
    explicit IoError(const std::string& w) : Error(ErrorKind::Io, w) {}
};

} // namespace ostr
