#pragma once

// Reference solvers used to check the mixture bridge: discrete entropic OT by
// log-domain Sinkhorn, the closed-form entropic map between diagonal Gaussians,
// and Brownian-bridge marginals.

#include <cstdint>
#include <vector>

#include "sbsteer/common.hpp"

namespace sbsteer::oracle {

struct DiscreteEotProblem {
    Vector mu;
    Vector nu;
    Matrix cost;
    double epsilon = 1.0;

    void validate() const;
};

/// Quadratic cost 0.5 |x_i - y_j|^2 between two weighted point clouds.
DiscreteEotProblem make_problem(const std::vector<Vector>& xs, const Vector& mu, const std::vector<Vector>& ys,
                                const Vector& nu, double epsilon);

struct TransportPlan {
    Matrix matrix;
    bool converged = false;
    int iterations = 0;
    double max_violation = 0.0;
};

/// Alternating dual updates in the log domain until the row marginal error drops below tol.
/// Column marginals are exact after every iteration.
TransportPlan sinkhorn(const DiscreteEotProblem& prob, double tol, int max_iter);

/// <cost, plan> + eps * KL(plan || mu nu^T).
double eot_objective(const DiscreteEotProblem& prob, const Matrix& plan);

double max_marginal_violation(const DiscreteEotProblem& prob, const Matrix& plan);

/// Per-dimension conditional law a1 | a0 ~ N(slope (a0 - mean0) + mean1, cond_var)
/// of the entropic plan between N(mean0, diag var0) and N(mean1, diag var1).
struct GaussianBridgeMap {
    Vector mean0;
    Vector mean1;
    Vector slope;
    Vector cond_var;

    Vector conditional_mean(const Vector& a0) const;
};

GaussianBridgeMap gaussian_eot_bridge(const Vector& mean0, const Vector& var0, const Vector& mean1,
                                      const Vector& var1, double epsilon);

/// Sample of N((1 - t) a0 + t a1, eps t (1 - t) I). Endpoints are returned exactly.
Vector brownian_bridge_sample(const Vector& a0, const Vector& a1, double t, double epsilon, std::uint64_t seed);

} // namespace sbsteer::oracle
