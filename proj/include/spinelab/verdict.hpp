#ifndef SPINELAB_VERDICT_HPP
#define SPINELAB_VERDICT_HPP

#include <optional>
#include <string>
#include <string_view>

#include "spinelab/errors.hpp"

namespace spinelab {

enum class Regime {
  AsZero,
  L1Convergent,
  LpConvergent,
  LpUnbounded,
  BoundaryUndetermined,
};

inline std::string_view to_string(Regime tag) {
  switch (tag) {
    case Regime::AsZero: return "AS_ZERO";
    case Regime::L1Convergent: return "L1_CONVERGENT";
    case Regime::LpConvergent: return "LP_CONVERGENT";
    case Regime::LpUnbounded: return "LP_UNBOUNDED";
    case Regime::BoundaryUndetermined: return "BOUNDARY_UNDETERMINED";
  }
  return "UNKNOWN";
}

/// Convergence classification of Z_lambda. `clause` is a stable identifier of
/// the criterion branch that fired; `reason` is the human-readable form.
struct ConvergenceVerdict {
  Regime tag;
  std::string clause;
  std::string reason;
};

inline void check_moment_order(std::optional<double> p) {
  if (p && !(*p > 1.0 && *p <= 2.0)) fail(ErrorCode::ConfigInvalid, "p in (1, 2]");
}

}  // namespace spinelab

#endif  // SPINELAB_VERDICT_HPP
