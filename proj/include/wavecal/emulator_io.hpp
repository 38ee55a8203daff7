#pragma once

// Versioned JSON text form of priors and trained emulators. The Cholesky
// factor is not stored; it is recomputed on load, which reproduces the
// original predictions bit-for-bit.

#include <nlohmann/json.hpp>

#include "wavecal/emulator.hpp"

namespace wavecal {

inline constexpr int kEmulatorFormatVersion = 1;

nlohmann::json prior_to_json(const EmulatorPrior& prior);
EmulatorPrior prior_from_json(const nlohmann::json& j);

/// Var[D] is stored as its diagonal when the off-diagonal entries equal the
/// prior covariance of the design (the usual case), and in full otherwise.
nlohmann::json emulator_to_json(const TrainedEmulator& em);
TrainedEmulator emulator_from_json(const nlohmann::json& j);

}  // namespace wavecal
