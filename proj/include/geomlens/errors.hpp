#pragma once

#include <stdexcept>

namespace geomlens {

// Base class for all library errors. Subclasses mirror the failure modes of
// the numeric pipeline so callers can map them to exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidDistribution : Error { using Error::Error; };
struct DegenerateDirection : Error { using Error::Error; };
struct EpsilonTooLarge : Error { using Error::Error; };
struct InadmissibleAction : Error { using Error::Error; };
struct NonConvergence : Error { using Error::Error; };
struct OutOfImage : Error { using Error::Error; };
struct SingularGram : Error { using Error::Error; };
struct NoGap : Error { using Error::Error; };
struct RankTooLarge : Error { using Error::Error; };
struct TrainingDivergence : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

}  // namespace geomlens
