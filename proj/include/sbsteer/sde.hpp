#pragma once

#include <cstdint>
#include <vector>

#include "sbsteer/potential.hpp"

namespace sbsteer {

struct SdePath {
    std::vector<double> times;
    std::vector<ActivationVector> states;

    const ActivationVector& endpoint() const { return states.back(); }
};

inline constexpr int kInferenceSdeSteps = 32;
inline constexpr int kValidationSdeSteps = 200;

enum class Noise { on, off };

/// Euler-Maruyama on da = g(a, t) dt + sqrt(eps) dW from t = 0 to t_stop.
///
/// Stops at t_stop without rescaling the drift, so t_stop acts as the
/// intervention strength. Noise::off drops the diffusion term and leaves the
/// deterministic drift ODE. Throws NumericalError naming the step on a non-finite state.
SdePath integrate(const GaussianMixturePotential& pot, const ActivationVector& a0, double t_stop, int n_steps,
                  std::uint64_t seed, bool record_path = true, Noise noise = Noise::on);

} // namespace sbsteer
