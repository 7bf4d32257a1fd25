#pragma once

#include <cmath>
#include <limits>
#include <numbers>

namespace nhflux {

// cm^-1, ps, K everywhere in the public interface.
struct UnitSystem {
  double hbar = 5.308837458876145;   // cm^-1 ps  (hbar / (h c) with c in cm/ps)
  double kB = 0.695034800486;         // cm^-1 / K

  double beta(double temperature) const { return 1.0 / (kB * temperature); }
};

inline constexpr UnitSystem kUnits{};

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace nhflux
