#pragma once

#include <stdexcept>
#include <string>

namespace drccots {

enum class ErrorKind {
    MalformedDocument,
    DanglingLineEndpoint,
    InfeasibleBounds,
    DisconnectedBaseGraph,
    RaggedRows,
    NonNumericCell,
    EmptyFile,
    DegenerateCoordinate,
    EmptyCluster,
    IslandedTopology,
    QuantileDomain,
    MeanOutsideSupport,
    UnboundedDual,
    NoFeasibleStart,
    CurtailmentInfeasible,
    NumericalBreakdown,
    DimensionMismatch,
    InvalidArgument,
    Io,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace drccots
