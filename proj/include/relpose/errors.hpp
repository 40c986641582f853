#pragma once

#include <stdexcept>
#include <string>

namespace relpose {

// Base class for all recoverable estimation failures. Pipelines catch this
// per scene and record the failure instead of aborting the run.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Geometric failures
struct DegenerateConfiguration : Error {
  using Error::Error;
};
struct CheiralityFailure : Error {
  using Error::Error;
};
struct InsufficientCorrespondences : Error {
  using Error::Error;
};
struct NoConsensus : Error {
  using Error::Error;
};
struct BehindCamera : Error {
  using Error::Error;
};
struct ParallelRays : Error {
  using Error::Error;
};
struct ZeroVector : Error {
  using Error::Error;
};
struct GimbalLock : Error {
  using Error::Error;
};

// Numeric / optimization failures
struct DivergedOptimization : Error {
  using Error::Error;
};
struct SingularInformation : Error {
  using Error::Error;
};
struct NoInformation : Error {
  using Error::Error;
};
struct NonFiniteLoss : Error {
  using Error::Error;
};

// Input failures
struct EmptyInput : Error {
  using Error::Error;
};
struct InfeasibleConfig : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};

}  // namespace relpose
