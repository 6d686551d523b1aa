#include "sbsteer/sde.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace sbsteer {

SdePath integrate(const GaussianMixturePotential& pot, const ActivationVector& a0, double t_stop, int n_steps,
                  std::uint64_t seed, bool record_path, Noise noise) {
    require(n_steps >= 1, "n_steps must be >= 1");
    require(t_stop >= 0.0 && t_stop <= 1.0, "t_stop must lie in [0, 1]");
    detail::check_dim(pot, a0, "a0");

    SdePath path;
    path.times.push_back(0.0);
    path.states.push_back(a0);
    if (t_stop == 0.0)
        return path;

    const double dt = t_stop / n_steps;
    const double noise_scale = noise == Noise::on ? std::sqrt(pot.epsilon() * dt) : 0.0;
    const double t_cap = 1.0 - 0.5 * dt;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    if (record_path) {
        path.times.reserve(static_cast<std::size_t>(n_steps) + 1);
        path.states.reserve(static_cast<std::size_t>(n_steps) + 1);
    }
    Vector a = a0;
    for (int k = 0; k < n_steps; ++k) {
        const double t = k * dt;
        a += drift(pot, a, std::min(t, t_cap)) * dt;
        if (noise == Noise::on) {
            for (Eigen::Index d = 0; d < a.size(); ++d)
                a[d] += noise_scale * normal(rng);
        }
        if (!a.allFinite())
            throw NumericalError("SDE state became non-finite at step " + std::to_string(k));
        if (record_path) {
            path.times.push_back(k + 1 == n_steps ? t_stop : (k + 1) * dt);
            path.states.push_back(a);
        }
    }
    if (!record_path) {
        path.times.push_back(t_stop);
        path.states.push_back(std::move(a));
    }
    return path;
}

} // namespace sbsteer
