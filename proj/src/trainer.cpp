#include "sbsteer/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace sbsteer {

std::string_view to_string(InitStrategy s) {
    return s == InitStrategy::data_kmeans ? "data_kmeans" : "random_sphere";
}

InitStrategy parse_init_strategy(std::string_view s) {
    if (s == "data_kmeans")
        return InitStrategy::data_kmeans;
    if (s == "random_sphere")
        return InitStrategy::random_sphere;
    throw ContractError("unknown init strategy '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
    require(epochs >= 0, "epochs must be >= 0");
    require(batch_size >= 2, "batch_size must be >= 2");
    require(learning_rate > 0.0 && learning_rate <= 1.0, "learning_rate must lie in (0, 1]");
    require(final_learning_rate > 0.0 && final_learning_rate <= learning_rate,
            "final learning rate must lie in (0, learning_rate]");
    require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
    require(clip_norm > 0.0, "clip norm must be positive");
    require(g_components >= 1, "need at least one mixture component");
    require(epsilon > 0.0, "epsilon must be positive");
}

namespace {

Vector sample_mean(const std::vector<ActivationVector>& xs, int dim) {
    Vector m = Vector::Zero(dim);
    for (const auto& x : xs)
        m += x;
    return xs.empty() ? m : Vector(m / static_cast<double>(xs.size()));
}

Vector sample_variance(const std::vector<ActivationVector>& xs, const Vector& mean) {
    Vector v = Vector::Zero(mean.size());
    for (const auto& x : xs)
        v.array() += (x - mean).array().square();
    return v / static_cast<double>(xs.size());
}

std::vector<Vector> kmeans_plus_plus(const std::vector<ActivationVector>& xs, int k, std::mt19937_64& rng) {
    const std::size_t n = xs.size();
    std::vector<Vector> centers;
    centers.reserve(static_cast<std::size_t>(k));
    std::uniform_int_distribution<std::size_t> uniform(0, n - 1);
    centers.push_back(xs[uniform(rng)]);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    while (static_cast<int>(centers.size()) < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], (xs[i] - centers.back()).squaredNorm());
            total += d2[i];
        }
        if (total > 0.0) {
            std::discrete_distribution<std::size_t> pick(d2.begin(), d2.end());
            centers.push_back(xs[pick(rng)]);
        } else {
            centers.push_back(xs[uniform(rng)]);
        }
    }

    // A few Lloyd passes; empty clusters keep their seed.
    std::vector<int> owner(n, 0);
    for (int pass = 0; pass < 10; ++pass) {
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double d = (xs[i] - centers[static_cast<std::size_t>(c)]).squaredNorm();
                if (d < best) {
                    best = d;
                    owner[i] = c;
                }
            }
        }
        std::vector<Vector> sums(static_cast<std::size_t>(k), Vector::Zero(xs.front().size()));
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < n; ++i) {
            sums[static_cast<std::size_t>(owner[i])] += xs[i];
            ++counts[static_cast<std::size_t>(owner[i])];
        }
        for (int c = 0; c < k; ++c)
            if (counts[static_cast<std::size_t>(c)] > 0)
                centers[static_cast<std::size_t>(c)] = sums[static_cast<std::size_t>(c)] / counts[static_cast<std::size_t>(c)];
    }
    return centers;
}

const char* block_name(int offset_in_component, int dim) {
    if (offset_in_component == 0)
        return "log_weight";
    return offset_in_component <= dim ? "center" : "log_scale_diag";
}

void check_finite_blocks(const Vector& v, int dim, const char* what) {
    const int stride = 1 + 2 * dim;
    for (Eigen::Index p = 0; p < v.size(); ++p) {
        if (!std::isfinite(v[p])) {
            const int comp = static_cast<int>(p) / stride;
            throw NumericalError(std::string(what) + " became non-finite in block '" +
                                 block_name(static_cast<int>(p) % stride, dim) + "' of component " +
                                 std::to_string(comp));
        }
    }
}

// Potential in coordinates shifted by -offset, expressed back in the original ones.
// Translating both marginals by c leaves the transport cost unchanged; the Gibbs
// factor exp(<c, x1> / eps) moves each component mean by -S c and rescales its weight.
GaussianMixturePotential uncenter(const GaussianMixturePotential& centered, const Vector& offset) {
    std::vector<MixtureComponent> comps;
    const double eps = centered.epsilon();
    for (const auto& c : centered.components()) {
        const Vector s = c.scale_diag();
        const Vector sc = s.cwiseProduct(offset);
        MixtureComponent out;
        out.log_weight = c.log_weight + (offset.dot(sc) - 2.0 * c.center.dot(offset)) / (2.0 * eps);
        out.center = offset + c.center - sc;
        out.log_scale_diag = c.log_scale_diag;
        comps.push_back(std::move(out));
    }
    return GaussianMixturePotential(eps, std::move(comps));
}

} // namespace

GaussianMixturePotential init_potential(const std::vector<ActivationVector>& samples0,
                                        const std::vector<ActivationVector>& samples1, const TrainConfig& cfg,
                                        std::uint64_t rng_seed) {
    cfg.validate();
    require(!samples1.empty(), "factual sample set is empty");
    const int dim = static_cast<int>(samples1.front().size());
    const int g = cfg.g_components;
    if (cfg.init_strategy == InitStrategy::data_kmeans)
        require(static_cast<int>(samples1.size()) >= g, "data_kmeans needs at least G factual samples");

    const Vector mean0 = sample_mean(samples0, dim);
    const Vector mean1 = sample_mean(samples1, dim);
    const Vector var1 = sample_variance(samples1, mean1);
    const Vector scale = (var1 / cfg.epsilon).cwiseMax(kMinInitScale).cwiseMin(kMaxInitScale);
    const Vector log_scale = scale.array().log();

    std::mt19937_64 rng(rng_seed);
    std::vector<Vector> centers;
    if (cfg.init_strategy == InitStrategy::data_kmeans) {
        // Place each component so that its conditional mean at E[a0] sits on a cluster center.
        for (auto& c : kmeans_plus_plus(samples1, g, rng))
            centers.push_back(c - scale.cwiseProduct(mean0));
    } else {
        std::normal_distribution<double> normal(0.0, 1.0);
        const Vector sd = var1.array().sqrt();
        for (int i = 0; i < g; ++i) {
            Vector c(dim);
            for (int d = 0; d < dim; ++d)
                c[d] = sd[d] * normal(rng);
            centers.push_back(std::move(c));
        }
    }

    std::vector<MixtureComponent> comps;
    const double log_w = -std::log(static_cast<double>(g));
    for (auto& c : centers)
        comps.push_back({log_w, std::move(c), log_scale});
    return GaussianMixturePotential(cfg.epsilon, std::move(comps));
}

FitResult fit(const std::vector<ActivationVector>& samples0, const std::vector<ActivationVector>& samples1,
              const TrainConfig& cfg) {
    cfg.validate();
    require(!samples0.empty() && !samples1.empty(), "both sample sets must be nonempty");
    const auto dim = samples0.front().size();
    for (const auto& x : samples0)
        require(x.size() == dim && x.allFinite(), "hallucinated samples must share one dimension and be finite");
    for (const auto& x : samples1)
        require(x.size() == dim && x.allFinite(), "factual samples must share one dimension and be finite");

    const auto start = std::chrono::steady_clock::now();
    TrainReport report;
    if (cfg.epochs == 0) {
        auto pot = init_potential(samples0, samples1, cfg, cfg.seed);
        report.final_loss = loss_terms(pot, samples0, samples1).loss();
        report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return {std::move(pot), std::move(report)};
    }

    // Optimize on data centered at the pooled mean; the loss curvature grows with
    // |a| / eps, so an offset slows SGD without changing the optimum.
    Vector offset = Vector::Zero(dim);
    for (const auto& x : samples0)
        offset += x;
    for (const auto& x : samples1)
        offset += x;
    offset /= static_cast<double>(samples0.size() + samples1.size());
    std::vector<ActivationVector> centered0, centered1;
    centered0.reserve(samples0.size());
    centered1.reserve(samples1.size());
    for (const auto& x : samples0)
        centered0.push_back(x - offset);
    for (const auto& x : samples1)
        centered1.push_back(x - offset);
    auto pot = init_potential(centered0, centered1, cfg, cfg.seed);

    const std::size_t n0 = samples0.size();
    const std::size_t n1 = samples1.size();
    const std::size_t bs0 = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n0);
    const std::size_t bs1 = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n1);
    const long steps_per_epoch =
        std::max<long>(1, static_cast<long>(std::max(n0, n1) / static_cast<std::size_t>(cfg.batch_size)));
    const long total_steps = steps_per_epoch * cfg.epochs;

    std::mt19937_64 rng(derive_seed(cfg.seed, 1));
    std::vector<std::size_t> perm0(n0), perm1(n1);
    std::iota(perm0.begin(), perm0.end(), 0);
    std::iota(perm1.begin(), perm1.end(), 0);
    std::vector<ActivationVector> batch0(bs0), batch1(bs1);

    Vector theta = pot.parameters();
    Vector velocity = Vector::Zero(theta.size());
    const double eps = cfg.epsilon;
    const int d = static_cast<int>(dim);
    long step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(perm0.begin(), perm0.end(), rng);
        std::shuffle(perm1.begin(), perm1.end(), rng);
        for (long b = 0; b < steps_per_epoch; ++b, ++step) {
            for (std::size_t k = 0; k < bs0; ++k)
                batch0[k] = centered0[perm0[(static_cast<std::size_t>(b) * bs0 + k) % n0]];
            for (std::size_t k = 0; k < bs1; ++k)
                batch1[k] = centered1[perm1[(static_cast<std::size_t>(b) * bs1 + k) % n1]];

            auto lg = loss_and_gradient(pot, batch0, batch1);
            check_finite_blocks(lg.gradient, d, "gradient");
            const double norm = lg.gradient.norm();
            if (norm > cfg.clip_norm)
                lg.gradient *= cfg.clip_norm / norm;

            const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
            const double lr = cfg.final_learning_rate + 0.5 * (cfg.learning_rate - cfg.final_learning_rate) *
                                                            (1.0 + std::cos(std::numbers::pi * progress));
            velocity = cfg.momentum * velocity + lg.gradient;
            theta -= lr * velocity;
            check_finite_blocks(theta, d, "parameter");
            pot = GaussianMixturePotential::from_parameters(eps, d, theta);
        }
        const double loss = loss_terms(uncenter(pot, offset), samples0, samples1).loss();
        if (!std::isfinite(loss))
            throw NumericalError("full-data loss is non-finite after epoch " + std::to_string(epoch));
        report.loss_curve.push_back(loss);
    }
    report.iterations = step;
    report.final_loss = report.loss_curve.back();
    report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {uncenter(pot, offset), std::move(report)};
}

std::string report_to_json(const TrainReport& report) {
    std::string out = "{\"final_loss\": " + format_double(report.final_loss);
    out += ", \"iterations\": " + std::to_string(report.iterations);
    out += ", \"epochs\": " + std::to_string(report.loss_curve.size());
    out += ", \"loss_curve\": [";
    for (std::size_t i = 0; i < report.loss_curve.size(); ++i) {
        if (i)
            out += ", ";
        out += format_double(report.loss_curve[i]);
    }
    out += "]}\n";
    return out;
}

std::string loss_curve_csv(const TrainReport& report) {
    std::string out = "epoch,loss\n";
    for (std::size_t i = 0; i < report.loss_curve.size(); ++i)
        out += std::to_string(i + 1) + "," + format_double(report.loss_curve[i]) + "\n";
    return out;
}

} // namespace sbsteer
