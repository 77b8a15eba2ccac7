#include "drccots/errors.hpp"

namespace drccots {

const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::MalformedDocument: return "MalformedDocument";
        case ErrorKind::DanglingLineEndpoint: return "DanglingLineEndpoint";
        case ErrorKind::InfeasibleBounds: return "InfeasibleBounds";
        case ErrorKind::DisconnectedBaseGraph: return "DisconnectedBaseGraph";
        case ErrorKind::RaggedRows: return "RaggedRows";
        case ErrorKind::NonNumericCell: return "NonNumericCell";
        case ErrorKind::EmptyFile: return "EmptyFile";
        case ErrorKind::DegenerateCoordinate: return "DegenerateCoordinate";
        case ErrorKind::EmptyCluster: return "EmptyCluster";
        case ErrorKind::IslandedTopology: return "IslandedTopology";
        case ErrorKind::QuantileDomain: return "QuantileDomain";
        case ErrorKind::MeanOutsideSupport: return "MeanOutsideSupport";
        case ErrorKind::UnboundedDual: return "UnboundedDual";
        case ErrorKind::NoFeasibleStart: return "NoFeasibleStart";
        case ErrorKind::CurtailmentInfeasible: return "CurtailmentInfeasible";
        case ErrorKind::NumericalBreakdown: return "NumericalBreakdown";
        case ErrorKind::DimensionMismatch: return "DimensionMismatch";
        case ErrorKind::InvalidArgument: return "InvalidArgument";
        case ErrorKind::Io: return "Io";
    }
    return "Unknown";
}

}  // namespace drccots
