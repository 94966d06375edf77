#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ctmflow {

enum class ErrorCode {
  // network
  UnreachableCell,
  BadRowSum,
  BadRatio,
  InconsistentEdge,
  UnknownCell,
  DuplicateCell,
  BadDimensions,
  NonSquare,
  // ctm
  NegativeVolume,
  NegativeResultingVolume,
  InfeasibleBounds,
  InvalidParams,
  // qp / solvers
  LengthMismatch,
  SingularG,
  Infeasible,
  DegenerateNorms,
  InvalidStepSize,
  // final value
  ObserveAfterTermination,
  NotDefectiveYet,
  DegenerateDenominator,
  NoConvergenceDetected,
  // distributed
  MissingNeighborValue,
  ZetaNotFinalized,
  ProtocolViolation,
  LocalityViolation,
  NonConvergence,
  // io
  ParseError,
  IoError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so that
/// callers (and tests) can branch on the kind of failure rather than the text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ctmflow
