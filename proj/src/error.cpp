#include "ctmflow/error.hpp"

namespace ctmflow {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::UnreachableCell: return "UnreachableCell";
    case ErrorCode::BadRowSum: return "BadRowSum";
    case ErrorCode::BadRatio: return "BadRatio";
    case ErrorCode::InconsistentEdge: return "InconsistentEdge";
    case ErrorCode::UnknownCell: return "UnknownCell";
    case ErrorCode::DuplicateCell: return "DuplicateCell";
    case ErrorCode::BadDimensions: return "BadDimensions";
    case ErrorCode::NonSquare: return "NonSquare";
    case ErrorCode::NegativeVolume: return "NegativeVolume";
    case ErrorCode::NegativeResultingVolume: return "NegativeResultingVolume";
    case ErrorCode::InfeasibleBounds: return "InfeasibleBounds";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::SingularG: return "SingularG";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::DegenerateNorms: return "DegenerateNorms";
    case ErrorCode::InvalidStepSize: return "InvalidStepSize";
    case ErrorCode::ObserveAfterTermination: return "ObserveAfterTermination";
    case ErrorCode::NotDefectiveYet: return "NotDefectiveYet";
    case ErrorCode::DegenerateDenominator: return "DegenerateDenominator";
    case ErrorCode::NoConvergenceDetected: return "NoConvergenceDetected";
    case ErrorCode::MissingNeighborValue: return "MissingNeighborValue";
    case ErrorCode::ZetaNotFinalized: return "ZetaNotFinalized";
    case ErrorCode::ProtocolViolation: return "ProtocolViolation";
    case ErrorCode::LocalityViolation: return "LocalityViolation";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

}  // namespace ctmflow
