#pragma once

#include <stdexcept>
#include <string>

namespace ndae {

enum class Errc {
  DomainError,
  DimensionMismatch,
  UnknownSymbol,
  EmptyHorizon,
  TimeOutOfHorizon,
  IndexOutOfRange,
  ShapeMismatch,
  EmptySample,
  UnsupportedOrder,
  DuplicatePoints,
  OutOfHorizon,
  MissingNetwork,
  InconsistentInitialState,
  NonpositiveVolume,
  SingularSystem,
  NonConverged,
  InfeasibleProblem,
  ConfigError,
  DataNotFound,
  IoError,
};

/// Library-wide exception carrying a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Evaluation hit an argument outside an operation's domain (log/sqrt/div/exp guard).
class DomainError : public Error {
 public:
  DomainError(int node, const std::string& what) : Error(Errc::DomainError, what), node_(node) {}
  int node() const noexcept { return node_; }

 private:
  int node_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace ndae
