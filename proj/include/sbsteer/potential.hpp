#pragma once

// Gaussian-mixture Schrodinger potential and the closed-form quantities built on it.
//
// The factual-side potential is
//     v(a1) = sum_i alpha_i N(a1 | r_i, eps S_i),   S_i diagonal, positive.
// Pairing it with the quadratic-cost Gibbs kernel exp(<a0, a1> / eps) gives a
// conditional transport law that is again a Gaussian mixture in a1, and a
// bridge drift that is a softmax-weighted sum of affine fields. Every mixture
// sum is evaluated in the log domain.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "sbsteer/common.hpp"

namespace sbsteer {

using ActivationVector = Vector;

struct MixtureComponent {
    double log_weight = 0.0;
    Vector center;
    Vector log_scale_diag;

    Vector scale_diag() const { return log_scale_diag.array().exp(); }
};

inline constexpr double kMinEpsilon = 1e-3;

class GaussianMixturePotential {
public:
    GaussianMixturePotential(double epsilon, std::vector<MixtureComponent> components);

    double epsilon() const { return epsilon_; }
    int dim() const { return dim_; }
    int size() const { return static_cast<int>(components_.size()); }
    const std::vector<MixtureComponent>& components() const { return components_; }
    const MixtureComponent& component(int i) const { return components_[static_cast<std::size_t>(i)]; }

    // Flat parameter layout, per component: [log_weight, center(dim), log_scale_diag(dim)].
    int parameter_count() const { return size() * stride(); }
    int stride() const { return 1 + 2 * dim_; }
    Vector parameters() const;
    static GaussianMixturePotential from_parameters(double epsilon, int dim, const Vector& params);

    /// Same potential with every log-weight shifted by `offset`.
    GaussianMixturePotential with_weight_offset(double offset) const;

private:
    double epsilon_;
    int dim_;
    std::vector<MixtureComponent> components_;
};

/// pi(a1 | a0) = sum_i w_i N(a1 | means_i, diag(cov_diags_i)).
struct ConditionalMixture {
    Vector anchor;
    Vector log_weights;
    std::vector<Vector> means;
    std::vector<Vector> cov_diags;
    double log_normalizer = 0.0;

    int dim() const { return static_cast<int>(anchor.size()); }
    int size() const { return static_cast<int>(log_weights.size()); }
    Vector weights() const { return log_weights.array().exp(); }
};

/// log v(a1).
double log_potential(const GaussianMixturePotential& pot, const ActivationVector& a1);

ConditionalMixture condition(const GaussianMixturePotential& pot, const ActivationVector& a0);

double conditional_log_density(const ConditionalMixture& cond, const ActivationVector& a1);

ActivationVector conditional_mean(const ConditionalMixture& cond);

ActivationVector sample_conditional(const ConditionalMixture& cond, std::mt19937_64& rng);
std::vector<ActivationVector> sample_conditional(const ConditionalMixture& cond, std::uint64_t seed,
                                                 std::size_t n);

/// log of the bridge potential at time t,
///     h(a, t) = int N(a' | a, (1 - t) eps I) exp(|a'|^2 / 2 eps) v(a') da'.
/// At t = 1 it reduces to exp(|a|^2 / 2 eps) v(a); at t = 0 to c(a) exp(-|a|^2 / 2 eps) (2 pi eps)^(-D/2).
double log_bridge_potential(const GaussianMixturePotential& pot, const ActivationVector& a, double t);

/// g(a, t) = eps * grad_a log h(a, t). Requires 0 <= t < 1.
ActivationVector drift(const GaussianMixturePotential& pot, const ActivationVector& a, double t);

struct LossTerms {
    double mean_log_normalizer = 0.0; // E_{a0}[log c(a0)]
    double mean_log_potential = 0.0;  // E_{a1}[log v(a1)]

    double loss() const { return mean_log_normalizer - mean_log_potential; }
};

LossTerms loss_terms(const GaussianMixturePotential& pot, std::span<const ActivationVector> batch0,
                     std::span<const ActivationVector> batch1);

struct LossGradient {
    LossTerms terms;
    Vector gradient; // flat parameter layout, d loss / d params
};

LossGradient loss_and_gradient(const GaussianMixturePotential& pot,
                               std::span<const ActivationVector> batch0,
                               std::span<const ActivationVector> batch1);

// Per-sample pieces shared with the parallel kernels.
namespace detail {

/// log c(a0); accumulates w_i-weighted parameter derivatives into `grad` scaled by `scale` when non-null.
double log_normalizer_with_grad(const GaussianMixturePotential& pot, const ActivationVector& a0,
                                Vector* grad, double scale);

/// log v(a1); accumulates derivatives into `grad` scaled by `scale` when non-null.
double log_potential_with_grad(const GaussianMixturePotential& pot, const ActivationVector& a1,
                               Vector* grad, double scale);

void check_dim(const GaussianMixturePotential& pot, const ActivationVector& a, const char* what);

} // namespace detail

} // namespace sbsteer
