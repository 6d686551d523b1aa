#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "sbsteer/bridge_io.hpp"
#include "sbsteer/potential.hpp"
#include "support.hpp"

using namespace sbsteer;
using sbsteer::testing::component;
using sbsteer::testing::identity_potential;
using sbsteer::testing::normal_log_pdf;
using sbsteer::testing::random_potential;
using sbsteer::testing::vec;

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

GaussianMixturePotential two_component_1d() {
    // eps = 0.5, alpha = (0.7, 0.3), r = (1, -1), S = (2, 1)
    return GaussianMixturePotential(0.5, {component(0.7, vec({1.0}), vec({2.0})), component(0.3, vec({-1.0}), vec({1.0}))});
}

// Trapezoid rule for the 1-D bridge potential integral; independent of the closed form.
double quadrature_log_bridge_1d(const GaussianMixturePotential& pot, double a, double t) {
    const double eps = pot.epsilon();
    const double lo = -40.0, hi = 40.0;
    const int n = 400000;
    const double h = (hi - lo) / n;
    double sum = 0.0;
    for (int k = 0; k <= n; ++k) {
        const double x = lo + h * k;
        double log_v = -INFINITY;
        for (const auto& c : pot.components()) {
            const double term = c.log_weight + normal_log_pdf(x, c.center[0], eps * std::exp(c.log_scale_diag[0]));
            log_v = std::max(log_v, term) + std::log1p(std::exp(-std::abs(log_v - term)));
        }
        const double integrand =
            std::exp(normal_log_pdf(x, a, (1.0 - t) * eps) + x * x / (2.0 * eps) + log_v);
        sum += (k == 0 || k == n ? 0.5 : 1.0) * integrand;
    }
    return std::log(sum * h);
}

bool close_rel(double a, double b, double rel, double floor) {
    return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + floor;
}

} // namespace

TEST_SUITE("potential") {

TEST_CASE("construction validates epsilon and dimensions") {
    std::string seen;
    set_warning_sink([&](const std::string& m) { seen = m; });
    CHECK_THROWS_AS(GaussianMixturePotential(5e-4, {component(1.0, vec({0.0}), vec({1.0}))}), ContractError);
    CHECK(seen.find("epsilon") != std::string::npos);
    set_warning_sink(nullptr);

    CHECK_THROWS_AS(GaussianMixturePotential(1.0, {}), ContractError);
    CHECK_THROWS_AS(GaussianMixturePotential(1.0, {component(1.0, vec({0.0, 1.0}), vec({1.0}))}), ContractError);
    CHECK_THROWS_AS(GaussianMixturePotential(
                        1.0, {component(1.0, vec({0.0}), vec({1.0})), component(1.0, vec({0.0, 1.0}), vec({1.0, 1.0}))}),
                    ContractError);
    CHECK_NOTHROW(GaussianMixturePotential(kMinEpsilon, {component(1.0, vec({0.0}), vec({1.0}))}));
}

TEST_CASE("flat parameters round-trip") {
    const auto pot = random_potential(3, 4, 0.7, 11);
    const auto back = GaussianMixturePotential::from_parameters(pot.epsilon(), pot.dim(), pot.parameters());
    CHECK(back.parameters() == pot.parameters());
    CHECK(pot.parameter_count() == 4 * 7);
    CHECK_THROWS_AS(GaussianMixturePotential::from_parameters(1.0, 3, Vector::Zero(8)), ContractError);
}

TEST_CASE("log_potential of a standard normal component") {
    const auto pot = identity_potential(1);
    CHECK(log_potential(pot, vec({0.0})) == doctest::Approx(-kHalfLog2Pi).epsilon(1e-14));
    CHECK(log_potential(pot, vec({0.0})) == doctest::Approx(-0.9189).epsilon(1e-4));
    CHECK(log_potential(pot, vec({2.0})) == doctest::Approx(-kHalfLog2Pi - 2.0).epsilon(1e-14));
}

TEST_CASE("log_potential of a two-component mixture matches the scalar sum") {
    const GaussianMixturePotential pot(1.0, {component(0.5, vec({-1.0}), vec({1.0})), component(0.5, vec({1.0}), vec({1.0}))});
    const double oracle = std::log(0.5 * std::exp(normal_log_pdf(0.0, -1.0, 1.0)) + 0.5 * std::exp(normal_log_pdf(0.0, 1.0, 1.0)));
    CHECK(log_potential(pot, vec({0.0})) == doctest::Approx(oracle).epsilon(1e-13));
    CHECK(oracle == doctest::Approx(-1.4189).epsilon(1e-4));
}

TEST_CASE("log_potential rejects a dimension mismatch") {
    CHECK_THROWS_AS(log_potential(identity_potential(2), vec({1.0})), ContractError);
    CHECK_THROWS_AS(condition(identity_potential(2), vec({1.0, 2.0, 3.0})), ContractError);
}

TEST_CASE("log_potential stays finite far from every component") {
    const auto pot = random_potential(2, 3, 0.01, 5);
    CHECK(std::isfinite(log_potential(pot, vec({1e3, -1e3}))));
}

TEST_CASE("condition: identity potential collapses to N(a0, eps I)") {
    const auto pot = identity_potential(3);
    const Vector a0 = vec({0.3, -1.2, 2.0});
    const auto cond = condition(pot, a0);
    REQUIRE(cond.size() == 1);
    CHECK(cond.log_weights[0] == 0.0);
    CHECK(cond.means[0] == a0);
    CHECK(cond.cov_diags[0] == Vector::Ones(3));
    CHECK(cond.anchor == a0);
}

TEST_CASE("condition: log normalizer of the identity potential") {
    const auto cond = condition(identity_potential(1), vec({2.0}));
    CHECK(cond.log_normalizer == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("condition: two-component weights match scalar brute force") {
    const auto pot = two_component_1d();
    const double a0 = 0.5, eps = 0.5;
    const double u1 = 0.7 * std::exp((2.0 * a0 * a0 + 2.0 * 1.0 * a0) / (2.0 * eps));
    const double u2 = 0.3 * std::exp((1.0 * a0 * a0 + 2.0 * -1.0 * a0) / (2.0 * eps));
    const auto cond = condition(pot, vec({a0}));
    CHECK(std::exp(cond.log_weights[0]) == doctest::Approx(u1 / (u1 + u2)).epsilon(1e-13));
    CHECK(std::exp(cond.log_weights[1]) == doctest::Approx(u2 / (u1 + u2)).epsilon(1e-13));
    CHECK(cond.log_normalizer == doctest::Approx(std::log(u1 + u2)).epsilon(1e-13));
    CHECK(cond.means[0][0] == doctest::Approx(2.0));
    CHECK(cond.means[1][0] == doctest::Approx(-0.5));
    CHECK(cond.cov_diags[0][0] == doctest::Approx(1.0));
    CHECK(cond.cov_diags[1][0] == doctest::Approx(0.5));
}

TEST_CASE("condition: weights normalize and means are exact") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal(0.0, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
        const auto pot = random_potential(3, 4, 0.05 + 0.1 * trial, 100 + trial);
        const Vector a0 = vec({normal(rng), normal(rng), normal(rng)});
        const auto cond = condition(pot, a0);
        CHECK(std::abs(cond.weights().sum() - 1.0) < 1e-10);
        for (int i = 0; i < pot.size(); ++i) {
            const auto& c = pot.component(i);
            const Vector expected = c.center + c.scale_diag().cwiseProduct(a0);
            CHECK(cond.means[static_cast<std::size_t>(i)] == expected);
        }
    }
}

TEST_CASE("condition survives exponents that overflow a double") {
    const auto pot = random_potential(2, 3, 1e-3, 7);
    const auto cond = condition(pot, vec({40.0, -35.0}));
    CHECK(std::isfinite(cond.log_normalizer));
    CHECK(std::abs(cond.weights().sum() - 1.0) < 1e-10);
}

TEST_CASE("conditional density integrates to one") {
    SUBCASE("one dimension") {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            const auto pot = random_potential(1, 3, 0.3, seed);
            const auto cond = condition(pot, vec({0.4 * static_cast<double>(seed) - 1.0}));
            double lo = INFINITY, hi = -INFINITY;
            for (int i = 0; i < cond.size(); ++i) {
                const double sd = std::sqrt(cond.cov_diags[static_cast<std::size_t>(i)][0]);
                lo = std::min(lo, cond.means[static_cast<std::size_t>(i)][0] - 10.0 * sd);
                hi = std::max(hi, cond.means[static_cast<std::size_t>(i)][0] + 10.0 * sd);
            }
            const int n = 20000;
            const double h = (hi - lo) / n;
            double sum = 0.0;
            for (int k = 0; k <= n; ++k)
                sum += (k == 0 || k == n ? 0.5 : 1.0) * std::exp(conditional_log_density(cond, vec({lo + h * k})));
            CHECK(sum * h == doctest::Approx(1.0).epsilon(1e-4));
        }
    }
    SUBCASE("two dimensions") {
        const auto pot = random_potential(2, 2, 0.5, 21);
        const auto cond = condition(pot, vec({0.3, -0.2}));
        Vector lo = Vector::Constant(2, INFINITY), hi = Vector::Constant(2, -INFINITY);
        for (int i = 0; i < cond.size(); ++i) {
            const Vector sd = cond.cov_diags[static_cast<std::size_t>(i)].array().sqrt();
            lo = lo.cwiseMin(cond.means[static_cast<std::size_t>(i)] - 10.0 * sd);
            hi = hi.cwiseMax(cond.means[static_cast<std::size_t>(i)] + 10.0 * sd);
        }
        const int n = 600;
        const Vector h = (hi - lo) / n;
        double sum = 0.0;
        for (int i = 0; i <= n; ++i) {
            for (int j = 0; j <= n; ++j) {
                const double w = (i == 0 || i == n ? 0.5 : 1.0) * (j == 0 || j == n ? 0.5 : 1.0);
                sum += w * std::exp(conditional_log_density(cond, vec({lo[0] + h[0] * i, lo[1] + h[1] * j})));
            }
        }
        CHECK(sum * h[0] * h[1] == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("sample_conditional: single-component sample mean") {
    const GaussianMixturePotential pot(0.5, {component(1.0, vec({1.0, -2.0}), vec({2.0, 0.5}))});
    const auto cond = condition(pot, vec({0.5, 1.0}));
    const std::size_t n = 100000;
    const auto xs = sample_conditional(cond, 17, n);
    REQUIRE(xs.size() == n);
    Vector mean = Vector::Zero(2);
    for (const auto& x : xs)
        mean += x;
    mean /= static_cast<double>(n);
    const double bound = 4.0 * std::sqrt(0.5 * 2.0) / std::sqrt(static_cast<double>(n));
    CHECK((mean - cond.means[0]).cwiseAbs().maxCoeff() < bound);
}

TEST_CASE("sample_conditional: seed replay is exact") {
    const auto cond = condition(random_potential(3, 3, 0.4, 2), vec({0.1, 0.2, 0.3}));
    const auto a = sample_conditional(cond, 99, 50);
    const auto b = sample_conditional(cond, 99, 50);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a[i] == b[i]);
    CHECK(sample_conditional(cond, 100, 1)[0] != a[0]);
    CHECK_THROWS_AS(sample_conditional(cond, 1, 0), ContractError);
}

TEST_CASE("sample_conditional: tail frequency follows the normalized mixture") {
    // P(X > x) = sum_i w_i (1 - Phi((x - m_i) / sd_i)); checked at several cut points within 3-sigma binomial bounds.
    const auto cond = condition(two_component_1d(), vec({0.5}));
    const auto w = cond.weights();
    const std::size_t n = 100000;
    const auto xs = sample_conditional(cond, 5, n);
    for (double cut : {-1.0, 0.0, 0.75, 2.0, 3.0}) {
        double p = 0.0;
        for (int i = 0; i < 2; ++i) {
            const auto k = static_cast<std::size_t>(i);
            p += w[i] * (1.0 - sbsteer::testing::normal_cdf((cut - cond.means[k][0]) / std::sqrt(cond.cov_diags[k][0])));
        }
        double hits = 0.0;
        for (const auto& x : xs)
            hits += x[0] > cut;
        const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(n));
        CHECK(std::abs(hits / static_cast<double>(n) - p) < 3.0 * sigma);
    }
}

TEST_CASE("conditional_mean") {
    SUBCASE("single component returns its mean") {
        const GaussianMixturePotential pot(1.0, {component(1.0, vec({1.0, 2.0}), vec({0.5, 3.0}))});
        const auto cond = condition(pot, vec({2.0, -1.0}));
        CHECK(conditional_mean(cond) == cond.means[0]);
    }
    SUBCASE("symmetric two-component mixture") {
        ConditionalMixture cond;
        cond.anchor = vec({0.0, 0.0});
        cond.log_weights = Vector::Constant(2, std::log(0.5));
        cond.means = {vec({1.5, -2.0}), vec({-1.5, 2.0})};
        cond.cov_diags = {Vector::Ones(2), Vector::Ones(2)};
        CHECK(conditional_mean(cond).cwiseAbs().maxCoeff() < 1e-15);
    }
    SUBCASE("two-component example by hand") {
        const double a0 = 0.5, eps = 0.5;
        const double u1 = 0.7 * std::exp((2.0 * a0 * a0 + 2.0 * a0) / (2.0 * eps));
        const double u2 = 0.3 * std::exp((a0 * a0 - 2.0 * a0) / (2.0 * eps));
        const double expected = (u1 * 2.0 + u2 * -0.5) / (u1 + u2);
        CHECK(conditional_mean(condition(two_component_1d(), vec({a0})))[0] == doctest::Approx(expected).epsilon(1e-13));
    }
    SUBCASE("single component is affine in the anchor") {
        const GaussianMixturePotential pot(0.3, {component(2.0, vec({1.0, -1.0, 0.5}), vec({0.2, 1.7, 4.0}))});
        const Vector a0 = vec({-0.7, 0.25, 3.0});
        const auto& c = pot.component(0);
        CHECK(conditional_mean(condition(pot, a0)) == c.center + c.scale_diag().cwiseProduct(a0));
    }
}

TEST_CASE("bridge potential matches quadrature") {
    const auto pot = two_component_1d();
    for (double t : {0.0, 0.3, 0.8}) {
        for (double a : {-1.0, 0.2, 1.5}) {
            CAPTURE(t);
            CAPTURE(a);
            CHECK(log_bridge_potential(pot, vec({a}), t) == doctest::Approx(quadrature_log_bridge_1d(pot, a, t)).epsilon(1e-8));
        }
    }
}

TEST_CASE("bridge potential endpoints") {
    const auto pot = random_potential(2, 3, 0.6, 31);
    const Vector a = vec({0.4, -0.9});
    const double eps = pot.epsilon();
    CHECK(log_bridge_potential(pot, a, 1.0) == doctest::Approx(a.squaredNorm() / (2.0 * eps) + log_potential(pot, a)).epsilon(1e-12));
    const double at0 = condition(pot, a).log_normalizer - a.squaredNorm() / (2.0 * eps) - 2.0 * 0.5 * std::log(2.0 * std::numbers::pi * eps);
    CHECK(log_bridge_potential(pot, a, 0.0) == doctest::Approx(at0).epsilon(1e-12));
}

TEST_CASE("drift of an identity potential vanishes") {
    // exp(|a|^2 / 2 eps) N(a | 0, eps I) is constant, so the bridge potential is flat.
    const auto pot = identity_potential(2);
    for (double t : {0.0, 0.5, 0.99})
        CHECK(drift(pot, vec({1.0, -2.0}), t).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("drift of a half-scale potential contracts toward the origin") {
    // S = I/2, r = 0: h(a, t) is proportional to N(a | 0, eps (2 - t) I), so g = -a / (2 - t).
    const GaussianMixturePotential pot(1.0, {component(1.0, Vector::Zero(2), Vector::Constant(2, 0.5))});
    const Vector g0 = drift(pot, vec({1.0, 0.0}), 0.0);
    CHECK(g0[0] == doctest::Approx(-0.5).epsilon(1e-14));
    CHECK(g0[1] == 0.0);
    const Vector g5 = drift(pot, vec({1.0, 0.0}), 0.5);
    CHECK(g5[0] == doctest::Approx(-1.0 / 1.5).epsilon(1e-14));
}

TEST_CASE("drift of a two-component potential matches finite differences") {
    const auto pot = two_component_1d();
    const double t = 0.3, a = 0.2, h = 1e-5;
    const double fd = pot.epsilon() * (log_bridge_potential(pot, vec({a + h}), t) - log_bridge_potential(pot, vec({a - h}), t)) / (2.0 * h);
    CHECK(close_rel(drift(pot, vec({a}), t)[0], fd, 1e-6, 1e-9));
}

TEST_CASE("drift matches finite differences at random points") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double h = 1e-5;
    int checked = 0;
    for (int k = 0; k < 100; ++k) {
        const int dim = 1 + k % 3;
        const auto pot = random_potential(dim, 1 + k % 3, 0.5 + unit(rng), 500 + static_cast<std::uint64_t>(k));
        Vector a(dim);
        for (int d = 0; d < dim; ++d)
            a[d] = normal(rng);
        const double t = 0.95 * unit(rng);
        const Vector g = drift(pot, a, t);
        for (int d = 0; d < dim; ++d) {
            Vector ap = a, am = a;
            ap[d] += h;
            am[d] -= h;
            const double fd = pot.epsilon() * (log_bridge_potential(pot, ap, t) - log_bridge_potential(pot, am, t)) / (2.0 * h);
            CHECK(close_rel(g[d], fd, 1e-5, 1e-8));
            ++checked;
        }
    }
    CHECK(checked > 100);
}

TEST_CASE("drift rejects t outside [0, 1)") {
    const auto pot = identity_potential(1);
    CHECK_THROWS_AS(drift(pot, vec({0.0}), 1.0), std::domain_error);
    CHECK_THROWS_AS(drift(pot, vec({0.0}), -0.1), std::domain_error);
    CHECK_THROWS_AS(drift(pot, vec({0.0, 1.0}), 0.5), ContractError);
}

TEST_CASE("loss terms on a single point") {
    const auto pot = identity_potential(1);
    const std::vector<Vector> b = {vec({0.0})};
    const auto terms = loss_terms(pot, b, b);
    CHECK(terms.mean_log_normalizer == 0.0);
    CHECK(terms.mean_log_potential == doctest::Approx(-kHalfLog2Pi).epsilon(1e-14));
    CHECK(terms.loss() == doctest::Approx(0.9189).epsilon(1e-4));
}

TEST_CASE("loss expectation under standard normal batches") {
    const int n = 200000;
    const auto b0 = sbsteer::testing::gaussian_samples(Vector::Zero(1), 1.0, n, 1);
    const auto b1 = sbsteer::testing::gaussian_samples(Vector::Zero(1), 1.0, n, 2);
    const auto terms = loss_terms(identity_potential(1), b0, b1);
    // L = a0^2/2 + a1^2/2 + log sqrt(2 pi) per pair; each square term has variance 1/2.
    const double sigma = std::sqrt(0.5 / n + 0.5 / n);
    CHECK(std::abs(terms.loss() - (1.0 + kHalfLog2Pi)) < 3.0 * sigma);
}

TEST_CASE("loss gauge: shifting log weights shifts both terms equally") {
    const auto pot = random_potential(2, 3, 0.8, 4);
    const auto b0 = sbsteer::testing::gaussian_samples(Vector::Zero(2), 1.0, 64, 3);
    const auto b1 = sbsteer::testing::gaussian_samples(Vector::Ones(2), 1.0, 64, 4);
    const double kappa = 3.7;
    const auto base = loss_terms(pot, b0, b1);
    const auto shifted = loss_terms(pot.with_weight_offset(kappa), b0, b1);
    CHECK(shifted.mean_log_normalizer == doctest::Approx(base.mean_log_normalizer + kappa).epsilon(1e-12));
    CHECK(shifted.mean_log_potential == doctest::Approx(base.mean_log_potential + kappa).epsilon(1e-12));
    CHECK(shifted.loss() == doctest::Approx(base.loss()).epsilon(1e-12));
}

TEST_CASE("gauge invariance of condition and drift") {
    const auto pot = random_potential(3, 3, 0.4, 8);
    const auto moved = pot.with_weight_offset(-12.5);
    const Vector a = vec({0.3, -0.4, 1.1});
    const auto c1 = condition(pot, a);
    const auto c2 = condition(moved, a);
    CHECK((c1.log_weights - c2.log_weights).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((drift(pot, a, 0.4) - drift(moved, a, 0.4)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("loss rejects empty batches") {
    const std::vector<Vector> none;
    const std::vector<Vector> one = {vec({0.0})};
    CHECK_THROWS_AS(loss_terms(identity_potential(1), none, one), ContractError);
    CHECK_THROWS_AS(loss_and_gradient(identity_potential(1), one, none), ContractError);
}

TEST_CASE("loss gradient matches central differences") {
    const double h = 1e-5;
    for (int dim = 1; dim <= 4; ++dim) {
        for (int g = 1; g <= 3; ++g) {
            const auto pot = random_potential(dim, g, 0.7, static_cast<std::uint64_t>(10 * dim + g));
            const auto b0 = sbsteer::testing::gaussian_samples(Vector::Zero(dim), 1.0, 16, 90 + static_cast<std::uint64_t>(dim));
            const auto b1 = sbsteer::testing::gaussian_samples(Vector::Constant(dim, 0.5), 1.2, 16, 95 + static_cast<std::uint64_t>(g));
            const auto lg = loss_and_gradient(pot, b0, b1);
            CHECK(lg.terms.loss() == doctest::Approx(loss_terms(pot, b0, b1).loss()).epsilon(1e-13));
            const Vector p = pot.parameters();
            for (Eigen::Index k = 0; k < p.size(); ++k) {
                Vector pp = p, pm = p;
                pp[k] += h;
                pm[k] -= h;
                const double fd = (loss_terms(GaussianMixturePotential::from_parameters(0.7, dim, pp), b0, b1).loss() -
                                   loss_terms(GaussianMixturePotential::from_parameters(0.7, dim, pm), b0, b1).loss()) /
                                  (2.0 * h);
                CAPTURE(dim);
                CAPTURE(g);
                CAPTURE(k);
                CHECK(close_rel(lg.gradient[k], fd, 1e-4, 1e-7));
            }
        }
    }
}

TEST_CASE("bridge JSON keeps field order and full precision") {
    const auto pot = random_potential(2, 2, 0.37, 13);
    const auto text = bridge_to_json(pot);
    CHECK(text.find("\"epsilon\"") < text.find("\"dim\""));
    CHECK(text.find("\"dim\"") < text.find("\"components\""));
    CHECK(text.find("\"log_weight\"") < text.find("\"center\""));
    CHECK(text.find("\"center\"") < text.find("\"log_scale_diag\""));
    const auto back = bridge_from_json(text);
    CHECK(back.epsilon() == pot.epsilon());
    CHECK(back.parameters() == pot.parameters());
    CHECK(bridge_to_json(back) == text);
}

TEST_CASE("bridge JSON rejects malformed documents") {
    CHECK_THROWS_AS(bridge_from_json("{"), IoError);
    CHECK_THROWS_AS(bridge_from_json(R"({"epsilon": 1.0, "dim": 2, "components": [{"log_weight": 0, "center": [0], "log_scale_diag": [0]}]})"),
                    std::exception);
    CHECK_THROWS_AS(load_bridge("/nonexistent/bridge.json"), IoError);
}

} // TEST_SUITE
