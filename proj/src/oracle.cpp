#include "sbsteer/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace sbsteer::oracle {

void DiscreteEotProblem::validate() const {
    require(mu.size() > 0 && nu.size() > 0, "marginals must be nonempty");
    require(cost.rows() == mu.size() && cost.cols() == nu.size(), "cost shape does not match marginals");
    require((mu.array() >= 0.0).all() && (nu.array() >= 0.0).all(), "marginal weights must be nonnegative");
    require(std::abs(mu.sum() - 1.0) < 1e-12 && std::abs(nu.sum() - 1.0) < 1e-12, "marginals must sum to 1");
    require((cost.array() >= 0.0).all(), "cost entries must be nonnegative");
    require(epsilon > 0.0, "epsilon must be positive");
}

DiscreteEotProblem make_problem(const std::vector<Vector>& xs, const Vector& mu, const std::vector<Vector>& ys,
                                const Vector& nu, double epsilon) {
    require(static_cast<Eigen::Index>(xs.size()) == mu.size(), "one weight per source point");
    require(static_cast<Eigen::Index>(ys.size()) == nu.size(), "one weight per target point");
    DiscreteEotProblem p;
    p.mu = mu;
    p.nu = nu;
    p.epsilon = epsilon;
    p.cost.resize(mu.size(), nu.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (std::size_t j = 0; j < ys.size(); ++j)
            p.cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 0.5 * (xs[i] - ys[j]).squaredNorm();
    p.validate();
    return p;
}

namespace {

// plan_ij = mu_i nu_j exp(u_i + v_j - C_ij / eps); zero-mass rows and columns are exactly zero.
Matrix plan_from_duals(const DiscreteEotProblem& p, const Vector& u, const Vector& v) {
    Matrix plan(p.cost.rows(), p.cost.cols());
    for (Eigen::Index i = 0; i < plan.rows(); ++i)
        for (Eigen::Index j = 0; j < plan.cols(); ++j)
            plan(i, j) = p.mu[i] == 0.0 || p.nu[j] == 0.0
                             ? 0.0
                             : p.mu[i] * p.nu[j] * std::exp(u[i] + v[j] - p.cost(i, j) / p.epsilon);
    return plan;
}

// log sum_k w_k exp(x_k) over the entries with w_k > 0, shifted by their maximum.
double log_weighted_sum_exp(const Vector& w, const Vector& x) {
    double top = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < x.size(); ++k)
        if (w[k] > 0.0)
            top = std::max(top, x[k]);
    double sum = 0.0;
    for (Eigen::Index k = 0; k < x.size(); ++k)
        if (w[k] > 0.0)
            sum += w[k] * std::exp(x[k] - top);
    return top + std::log(sum);
}

} // namespace

double max_marginal_violation(const DiscreteEotProblem& prob, const Matrix& plan) {
    const double rows = (plan.rowwise().sum() - prob.mu).cwiseAbs().maxCoeff();
    const double cols = (plan.colwise().sum().transpose() - prob.nu).cwiseAbs().maxCoeff();
    return std::max(rows, cols);
}

TransportPlan sinkhorn(const DiscreteEotProblem& prob, double tol, int max_iter) {
    prob.validate();
    require(tol > 0.0, "tolerance must be positive");
    require(max_iter >= 1, "max_iter must be >= 1");
    const Eigen::Index n = prob.mu.size();
    const Eigen::Index m = prob.nu.size();
    const double eps = prob.epsilon;
    Vector u = Vector::Zero(n);
    Vector v = Vector::Zero(m);
    Vector buf_m(m);
    Vector buf_n(n);

    TransportPlan out;
    for (int it = 1; it <= max_iter; ++it) {
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < m; ++j)
                buf_m[j] = v[j] - prob.cost(i, j) / eps;
            u[i] = -log_weighted_sum_exp(prob.nu, buf_m);
        }
        for (Eigen::Index j = 0; j < m; ++j) {
            for (Eigen::Index i = 0; i < n; ++i)
                buf_n[i] = u[i] - prob.cost(i, j) / eps;
            v[j] = -log_weighted_sum_exp(prob.mu, buf_n);
        }
        out.iterations = it;
        out.matrix = plan_from_duals(prob, u, v);
        out.max_violation = max_marginal_violation(prob, out.matrix);
        if (out.max_violation < tol) {
            out.converged = true;
            break;
        }
    }
    return out;
}

double eot_objective(const DiscreteEotProblem& prob, const Matrix& plan) {
    double transport = 0.0;
    double kl = 0.0;
    for (Eigen::Index i = 0; i < plan.rows(); ++i) {
        for (Eigen::Index j = 0; j < plan.cols(); ++j) {
            const double p = plan(i, j);
            transport += p * prob.cost(i, j);
            if (p > 0.0)
                kl += p * std::log(p / (prob.mu[i] * prob.nu[j]));
        }
    }
    return transport + prob.epsilon * kl;
}

Vector GaussianBridgeMap::conditional_mean(const Vector& a0) const {
    return (slope.array() * (a0 - mean0).array()).matrix() + mean1;
}

GaussianBridgeMap gaussian_eot_bridge(const Vector& mean0, const Vector& var0, const Vector& mean1,
                                      const Vector& var1, double epsilon) {
    const auto d = mean0.size();
    require(var0.size() == d && mean1.size() == d && var1.size() == d, "Gaussian statistics must share a dimension");
    require((var0.array() > 0.0).all() && (var1.array() > 0.0).all(), "variances must be positive");
    require(epsilon > 0.0, "epsilon must be positive");
    // The plan density is proportional to exp(a0 a1 / eps) u(a0) v(a1), so the joint
    // precision has off-diagonal -1/eps. With cross-covariance k this reads
    // k / (var0 var1 - k^2) = 1 / eps, i.e. k^2 + eps k - var0 var1 = 0.
    GaussianBridgeMap out;
    out.mean0 = mean0;
    out.mean1 = mean1;
    out.slope.resize(d);
    out.cond_var.resize(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        const double ab = var0[i] * var1[i];
        // Rationalized root, stable for eps >> sqrt(ab).
        const double k = 2.0 * ab / (epsilon + std::sqrt(epsilon * epsilon + 4.0 * ab));
        out.slope[i] = k / var0[i];
        out.cond_var[i] = var1[i] - k * k / var0[i];
    }
    return out;
}

Vector brownian_bridge_sample(const Vector& a0, const Vector& a1, double t, double epsilon, std::uint64_t seed) {
    require(a0.size() == a1.size(), "bridge endpoints must share a dimension");
    require(t >= 0.0 && t <= 1.0, "bridge time must lie in [0, 1]");
    if (t == 0.0)
        return a0;
    if (t == 1.0)
        return a1;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double sd = std::sqrt(epsilon * t * (1.0 - t));
    Vector x = (1.0 - t) * a0 + t * a1;
    for (Eigen::Index i = 0; i < x.size(); ++i)
        x[i] += sd * normal(rng);
    return x;
}

} // namespace sbsteer::oracle
