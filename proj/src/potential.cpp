#include "sbsteer/potential.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace sbsteer {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

} // namespace

GaussianMixturePotential::GaussianMixturePotential(double epsilon, std::vector<MixtureComponent> components)
    : epsilon_(epsilon), dim_(0), components_(std::move(components)) {
    if (!(epsilon_ >= kMinEpsilon)) {
        warn("epsilon " + format_double(epsilon_) + " is below the supported minimum 1e-3");
        throw ContractError("epsilon must be >= 1e-3");
    }
    require(!components_.empty(), "potential needs at least one component");
    dim_ = static_cast<int>(components_.front().center.size());
    require(dim_ > 0, "potential dimension must be positive");
    for (const auto& c : components_) {
        require(c.center.size() == dim_ && c.log_scale_diag.size() == dim_,
                "all components must share the potential dimension");
        require(std::isfinite(c.log_weight) && c.center.allFinite() && c.log_scale_diag.allFinite(),
                "potential parameters must be finite");
    }
}

Vector GaussianMixturePotential::parameters() const {
    Vector p(parameter_count());
    const int d = dim_;
    for (int i = 0; i < size(); ++i) {
        const auto& c = component(i);
        const int o = i * stride();
        p[o] = c.log_weight;
        p.segment(o + 1, d) = c.center;
        p.segment(o + 1 + d, d) = c.log_scale_diag;
    }
    return p;
}

GaussianMixturePotential GaussianMixturePotential::from_parameters(double epsilon, int dim, const Vector& params) {
    const int stride = 1 + 2 * dim;
    require(dim > 0 && params.size() > 0 && params.size() % stride == 0, "parameter vector has wrong length");
    std::vector<MixtureComponent> comps(static_cast<std::size_t>(params.size() / stride));
    for (std::size_t i = 0; i < comps.size(); ++i) {
        const int o = static_cast<int>(i) * stride;
        comps[i].log_weight = params[o];
        comps[i].center = params.segment(o + 1, dim);
        comps[i].log_scale_diag = params.segment(o + 1 + dim, dim);
    }
    return GaussianMixturePotential(epsilon, std::move(comps));
}

GaussianMixturePotential GaussianMixturePotential::with_weight_offset(double offset) const {
    auto comps = components_;
    for (auto& c : comps)
        c.log_weight += offset;
    return GaussianMixturePotential(epsilon_, std::move(comps));
}

namespace detail {

void check_dim(const GaussianMixturePotential& pot, const ActivationVector& a, const char* what) {
    if (a.size() != pot.dim())
        throw ContractError(std::string(what) + " has dimension " + std::to_string(a.size()) +
                            ", potential expects " + std::to_string(pot.dim()));
}

double log_normalizer_with_grad(const GaussianMixturePotential& pot, const ActivationVector& a0, Vector* grad,
                                double scale) {
    const int g = pot.size();
    const int d = pot.dim();
    const double eps = pot.epsilon();
    const Vector a0sq = a0.array().square();
    Vector terms(g);
    for (int i = 0; i < g; ++i) {
        const auto& c = pot.component(i);
        const double quad = c.scale_diag().dot(a0sq) + 2.0 * c.center.dot(a0);
        terms[i] = c.log_weight + quad / (2.0 * eps);
    }
    const double lse = log_sum_exp(terms);
    if (grad) {
        for (int i = 0; i < g; ++i) {
            const double w = std::exp(terms[i] - lse) * scale;
            const auto& c = pot.component(i);
            const int o = i * pot.stride();
            (*grad)[o] += w;
            grad->segment(o + 1, d) += (w / eps) * a0;
            grad->segment(o + 1 + d, d).array() += (w / (2.0 * eps)) * c.scale_diag().array() * a0sq.array();
        }
    }
    return lse;
}

double log_potential_with_grad(const GaussianMixturePotential& pot, const ActivationVector& a1, Vector* grad,
                               double scale) {
    const int g = pot.size();
    const int d = pot.dim();
    const double eps = pot.epsilon();
    Vector terms(g);
    std::vector<Vector> scaled_sq(grad ? static_cast<std::size_t>(g) : 0);
    for (int i = 0; i < g; ++i) {
        const auto& c = pot.component(i);
        const Vector var = eps * c.scale_diag();
        const Vector z2 = (a1 - c.center).array().square() / var.array();
        terms[i] = c.log_weight - 0.5 * (d * kLog2Pi + var.array().log().sum() + z2.sum());
        if (grad)
            scaled_sq[static_cast<std::size_t>(i)] = z2;
    }
    const double lse = log_sum_exp(terms);
    if (grad) {
        for (int i = 0; i < g; ++i) {
            const double w = std::exp(terms[i] - lse) * scale;
            const auto& c = pot.component(i);
            const int o = i * pot.stride();
            (*grad)[o] += w;
            grad->segment(o + 1, d).array() +=
                w * (a1 - c.center).array() / (eps * c.scale_diag().array());
            grad->segment(o + 1 + d, d).array() += w * (0.5 * scaled_sq[static_cast<std::size_t>(i)].array() - 0.5);
        }
    }
    return lse;
}

} // namespace detail

double log_potential(const GaussianMixturePotential& pot, const ActivationVector& a1) {
    detail::check_dim(pot, a1, "a1");
    return detail::log_potential_with_grad(pot, a1, nullptr, 0.0);
}

ConditionalMixture condition(const GaussianMixturePotential& pot, const ActivationVector& a0) {
    detail::check_dim(pot, a0, "a0");
    const int g = pot.size();
    const double eps = pot.epsilon();
    ConditionalMixture out;
    out.anchor = a0;
    out.log_weights.resize(g);
    out.means.reserve(static_cast<std::size_t>(g));
    out.cov_diags.reserve(static_cast<std::size_t>(g));
    const Vector a0sq = a0.array().square();
    for (int i = 0; i < g; ++i) {
        const auto& c = pot.component(i);
        const Vector s = c.scale_diag();
        out.log_weights[i] = c.log_weight + (s.dot(a0sq) + 2.0 * c.center.dot(a0)) / (2.0 * eps);
        out.means.push_back(c.center + s.cwiseProduct(a0));
        out.cov_diags.push_back(eps * s);
    }
    out.log_normalizer = log_sum_exp(out.log_weights);
    out.log_weights.array() -= out.log_normalizer;
    return out;
}

double conditional_log_density(const ConditionalMixture& cond, const ActivationVector& a1) {
    require(a1.size() == cond.dim(), "a1 dimension does not match the conditional mixture");
    const int d = cond.dim();
    Vector terms(cond.size());
    for (int i = 0; i < cond.size(); ++i) {
        const auto& var = cond.cov_diags[static_cast<std::size_t>(i)];
        const auto& mu = cond.means[static_cast<std::size_t>(i)];
        terms[i] = cond.log_weights[i] -
                   0.5 * (d * kLog2Pi + var.array().log().sum() + ((a1 - mu).array().square() / var.array()).sum());
    }
    return log_sum_exp(terms);
}

ActivationVector conditional_mean(const ConditionalMixture& cond) {
    Vector m = Vector::Zero(cond.dim());
    for (int i = 0; i < cond.size(); ++i)
        m += std::exp(cond.log_weights[i]) * cond.means[static_cast<std::size_t>(i)];
    return m;
}

ActivationVector sample_conditional(const ConditionalMixture& cond, std::mt19937_64& rng) {
    int k = 0;
    if (cond.size() > 1) {
        const Vector w = cond.weights();
        std::discrete_distribution<int> pick(w.data(), w.data() + w.size());
        k = pick(rng);
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto& mu = cond.means[static_cast<std::size_t>(k)];
    const auto& var = cond.cov_diags[static_cast<std::size_t>(k)];
    Vector x(cond.dim());
    for (int d = 0; d < cond.dim(); ++d)
        x[d] = mu[d] + std::sqrt(var[d]) * normal(rng);
    return x;
}

std::vector<ActivationVector> sample_conditional(const ConditionalMixture& cond, std::uint64_t seed, std::size_t n) {
    require(n >= 1, "sample count must be >= 1");
    std::mt19937_64 rng(seed);
    std::vector<ActivationVector> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(sample_conditional(cond, rng));
    return out;
}

namespace {

// Per-component log h_i(a, t) and the denominators q_i = 1 - t (1 - s_i).
// log h_i = log alpha_i - sum_d [ 0.5 log(2 pi eps q) + (t r^2 - 2 r a + (1 - s) a^2) / (2 eps q) ]
void bridge_terms(const GaussianMixturePotential& pot, const ActivationVector& a, double t, Vector& terms,
                  std::vector<Vector>& q) {
    const int g = pot.size();
    const double eps = pot.epsilon();
    terms.resize(g);
    q.resize(static_cast<std::size_t>(g));
    for (int i = 0; i < g; ++i) {
        const auto& c = pot.component(i);
        const Vector s = c.scale_diag();
        Vector qi = 1.0 - t * (1.0 - s.array());
        const auto& r = c.center;
        const double quad = ((t * r.array().square() - 2.0 * r.array() * a.array() +
                              (1.0 - s.array()) * a.array().square()) /
                             qi.array())
                                .sum();
        terms[i] = c.log_weight - 0.5 * ((std::log(2.0 * std::numbers::pi * eps) + qi.array().log()).sum()) -
                   quad / (2.0 * eps);
        q[static_cast<std::size_t>(i)] = std::move(qi);
    }
}

} // namespace

double log_bridge_potential(const GaussianMixturePotential& pot, const ActivationVector& a, double t) {
    detail::check_dim(pot, a, "a");
    require(t >= 0.0 && t <= 1.0, "bridge time must lie in [0, 1]");
    Vector terms;
    std::vector<Vector> q;
    bridge_terms(pot, a, t, terms, q);
    return log_sum_exp(terms);
}

ActivationVector drift(const GaussianMixturePotential& pot, const ActivationVector& a, double t) {
    detail::check_dim(pot, a, "a");
    if (!(t >= 0.0 && t < 1.0))
        throw std::domain_error("drift requires 0 <= t < 1, got t = " + format_double(t));
    Vector terms;
    std::vector<Vector> q;
    bridge_terms(pot, a, t, terms, q);
    const double lse = log_sum_exp(terms);
    Vector g = Vector::Zero(pot.dim());
    for (int i = 0; i < pot.size(); ++i) {
        const auto& c = pot.component(i);
        const double w = std::exp(terms[i] - lse);
        const Vector s = c.scale_diag();
        g.array() += w * (c.center.array() - (1.0 - s.array()) * a.array()) / q[static_cast<std::size_t>(i)].array();
    }
    return g;
}

LossTerms loss_terms(const GaussianMixturePotential& pot, std::span<const ActivationVector> batch0,
                     std::span<const ActivationVector> batch1) {
    require(!batch0.empty() && !batch1.empty(), "loss batches must be nonempty");
    LossTerms out;
    for (const auto& a0 : batch0) {
        detail::check_dim(pot, a0, "a0");
        out.mean_log_normalizer += detail::log_normalizer_with_grad(pot, a0, nullptr, 0.0);
    }
    for (const auto& a1 : batch1) {
        detail::check_dim(pot, a1, "a1");
        out.mean_log_potential += detail::log_potential_with_grad(pot, a1, nullptr, 0.0);
    }
    out.mean_log_normalizer /= static_cast<double>(batch0.size());
    out.mean_log_potential /= static_cast<double>(batch1.size());
    return out;
}

LossGradient loss_and_gradient(const GaussianMixturePotential& pot, std::span<const ActivationVector> batch0,
                               std::span<const ActivationVector> batch1) {
    require(!batch0.empty() && !batch1.empty(), "loss batches must be nonempty");
    LossGradient out;
    out.gradient = Vector::Zero(pot.parameter_count());
    const double s0 = 1.0 / static_cast<double>(batch0.size());
    const double s1 = 1.0 / static_cast<double>(batch1.size());
    for (const auto& a0 : batch0) {
        detail::check_dim(pot, a0, "a0");
        out.terms.mean_log_normalizer += detail::log_normalizer_with_grad(pot, a0, &out.gradient, s0);
    }
    for (const auto& a1 : batch1) {
        detail::check_dim(pot, a1, "a1");
        out.terms.mean_log_potential += detail::log_potential_with_grad(pot, a1, &out.gradient, -s1);
    }
    out.terms.mean_log_normalizer *= s0;
    out.terms.mean_log_potential *= s1;
    return out;
}

} // namespace sbsteer
