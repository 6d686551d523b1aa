#pragma once

// Shared fixtures: Gaussian sample sets, the two Gaussian transport tasks, and small potentials.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "sbsteer/potential.hpp"

namespace sbsteer::testing {

inline std::vector<Vector> gaussian_samples(const Vector& mean, double sd, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Vector> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Vector x(mean.size());
        for (Eigen::Index d = 0; d < x.size(); ++d)
            x[d] = mean[d] + sd * normal(rng);
        out.push_back(std::move(x));
    }
    return out;
}

struct GaussianTask {
    const char* name;
    Vector mean0;
    Vector mean1;
};

/// p0 = N(mean0, I), p1 = N(mean1, I) in two dimensions.
inline std::vector<GaussianTask> gaussian_tasks() {
    return {{"identity", Vector::Zero(2), Vector::Zero(2)}, {"shift", Vector::Zero(2), Vector{{3.0, 0.0}}}};
}

inline Vector vec(std::initializer_list<double> xs) {
    Vector v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs)
        v[i++] = x;
    return v;
}

inline MixtureComponent component(double weight, const Vector& center, const Vector& scale) {
    return {std::log(weight), center, scale.array().log()};
}

/// Single component with r = 0, S = I.
inline GaussianMixturePotential identity_potential(int dim, double eps = 1.0) {
    return GaussianMixturePotential(eps, {component(1.0, Vector::Zero(dim), Vector::Ones(dim))});
}

inline GaussianMixturePotential random_potential(int dim, int g, double eps, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> log_scale(-1.0, 0.7);
    std::vector<MixtureComponent> comps;
    for (int i = 0; i < g; ++i) {
        MixtureComponent c;
        c.log_weight = 0.5 * normal(rng);
        c.center = Vector(dim);
        c.log_scale_diag = Vector(dim);
        for (int d = 0; d < dim; ++d) {
            c.center[d] = normal(rng);
            c.log_scale_diag[d] = log_scale(rng);
        }
        comps.push_back(std::move(c));
    }
    return GaussianMixturePotential(eps, std::move(comps));
}

inline double normal_log_pdf(double x, double mean, double var) {
    constexpr double kLog2Pi = 1.8378770664093454835606594728112;
    return -0.5 * (kLog2Pi + std::log(var) + (x - mean) * (x - mean) / var);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

} // namespace sbsteer::testing
