#pragma once

#include <Eigen/Dense>

namespace dvae {

inline constexpr const char* kVersion = "0.1.0";

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Posterior standard deviations built from raw network outputs never go
/// below this value.
inline constexpr double kSigmaFloor = 1e-4;

/// Hard upper cap on AR(1) correlation; keeps -ln(1 - alpha^2) finite.
inline constexpr double kAlphaMax = 1.0 - 1e-6;

inline constexpr double kLn2 = 0.69314718055994530942;
inline constexpr double kLog2Pi = 1.83787706640934548356;

inline double nats_to_bits(double nats) { return nats / kLn2; }

}  // namespace dvae
