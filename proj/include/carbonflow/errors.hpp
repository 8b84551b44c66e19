#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace carbonflow {

enum class ErrorKind {
    SingularSystem,
    BalanceInfeasible,
    ZeroThroughflowNode,
    InfeasibleContract,
    UnknownId,
    ZeroGeneration,
    MixedMethods,
    MismatchedEntities,
    OverlappingHorizon,
    Infeasible,
    Unbounded,
    ZeroDelta,
    NotConverged,
    CapacityViolated,
    PowerLimitViolated,
    InfeasibleSchedule,
    ParseError,
    SchemaError,
    ValidationFailed,
    UnknownColumn,
    NegativeLoad,
    InvalidArgument,
};

constexpr std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::SingularSystem: return "SingularSystem";
    case ErrorKind::BalanceInfeasible: return "BalanceInfeasible";
    case ErrorKind::ZeroThroughflowNode: return "ZeroThroughflowNode";
    case ErrorKind::InfeasibleContract: return "InfeasibleContract";
    case ErrorKind::UnknownId: return "UnknownId";
    case ErrorKind::ZeroGeneration: return "ZeroGeneration";
    case ErrorKind::MixedMethods: return "MixedMethods";
    case ErrorKind::MismatchedEntities: return "MismatchedEntities";
    case ErrorKind::OverlappingHorizon: return "OverlappingHorizon";
    case ErrorKind::Infeasible: return "Infeasible";
    case ErrorKind::Unbounded: return "Unbounded";
    case ErrorKind::ZeroDelta: return "ZeroDelta";
    case ErrorKind::NotConverged: return "NotConverged";
    case ErrorKind::CapacityViolated: return "CapacityViolated";
    case ErrorKind::PowerLimitViolated: return "PowerLimitViolated";
    case ErrorKind::InfeasibleSchedule: return "InfeasibleSchedule";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::SchemaError: return "SchemaError";
    case ErrorKind::ValidationFailed: return "ValidationFailed";
    case ErrorKind::UnknownColumn: return "UnknownColumn";
    case ErrorKind::NegativeLoad: return "NegativeLoad";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

/// Domain error raised by every solver and parser in the library.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace carbonflow
