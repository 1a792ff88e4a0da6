#pragma once

#include <stdexcept>
#include <string>

namespace fidlar {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A series or request is too short for the requested window geometry.
class SizingError : public Error {
public:
    using Error::Error;
};

/// Tensor, layer or model inputs have incompatible shapes.
class StructuralError : public Error {
public:
    using Error::Error;
};

/// Malformed CSV, binary cache or artifact content.
class IngestionError : public Error {
public:
    using Error::Error;
};

/// A caller broke an API contract (e.g. stepping a frozen parameter set).
class ContractViolation : public Error {
public:
    using Error::Error;
};

/// Invalid or missing configuration values.
class ConfigurationError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

/// The simulator received non-finite forcing or produced a non-finite state.
class SimulationFault : public Error {
public:
    SimulationFault(const std::string& what, int cell) : Error(what), cell_(cell) {}
    int cell() const noexcept { return cell_; }

private:
    int cell_;
};

} // namespace fidlar
