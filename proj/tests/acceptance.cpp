// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. argv[1] is the path of the sbsteer command-line binary.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "sbsteer/bridge_io.hpp"
#include "sbsteer/kernels.hpp"
#include "sbsteer/oracle.hpp"
#include "sbsteer/probe.hpp"
#include "sbsteer/steering.hpp"
#include "sbsteer/toy_transformer.hpp"
#include "sbsteer/trainer.hpp"
#include "support.hpp"

using namespace sbsteer;
using sbsteer::testing::gaussian_samples;
using sbsteer::testing::random_potential;
using sbsteer::testing::vec;
namespace fs = std::filesystem;

namespace {

// Flip-rate delta measured for the seeded pipeline below; the check holds it within +-0.05.
constexpr double kPinnedFlipDelta = 0.3035;
constexpr double kFlipTolerance = 0.05;

struct Verdict {
    bool pass = false;
    std::string detail;
};

bool close_rel(double a, double b, double rel, double floor) {
    return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + floor;
}

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", x);
    return buf;
}

Verdict gaussian_oracle() {
    const Vector mu = vec({3.0, 0.0});
    const auto s0 = gaussian_samples(Vector::Zero(2), 1.0, 1500, 1);
    const auto s1 = gaussian_samples(mu, 1.0, 1500, 2);
    TrainConfig cfg;
    cfg.g_components = 1;
    cfg.epsilon = 1.0;
    const auto pot = fit(s0, s1, cfg).potential;
    const auto map = oracle::gaussian_eot_bridge(Vector::Zero(2), Vector::Ones(2), mu, Vector::Ones(2), 1.0);
    double worst = 0.0;
    for (const auto& a0 : gaussian_samples(Vector::Zero(2), 1.0, 100, 3))
        worst = std::max(worst, (conditional_mean(condition(pot, a0)) - map.conditional_mean(a0)).cwiseAbs().maxCoeff());
    return {worst < 0.15, "max coordinate error " + fmt(worst)};
}

Verdict sinkhorn_correctness() {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.5, 1.5);
    auto random_problem = [&](int n, double eps) {
        std::vector<Vector> xs, ys;
        Vector mu(n), nu(n);
        for (int i = 0; i < n; ++i) {
            xs.push_back(vec({normal(rng), normal(rng)}));
            ys.push_back(vec({normal(rng) + 1.0, normal(rng)}));
            mu[i] = unit(rng);
            nu[i] = unit(rng);
        }
        return oracle::make_problem(xs, mu / mu.sum(), ys, nu / nu.sum(), eps);
    };
    double worst_violation = 0.0;
    for (int n : {3, 10}) {
        const auto prob = random_problem(n, 0.5);
        const auto plan = oracle::sinkhorn(prob, 1e-12, 100000);
        if (!plan.converged)
            return {false, std::to_string(n) + "x" + std::to_string(n) + " did not converge"};
        worst_violation = std::max(worst_violation, oracle::max_marginal_violation(prob, plan.matrix));
    }
    const auto wide = random_problem(10, 1e6);
    const auto wide_plan = oracle::sinkhorn(wide, 1e-12, 100000);
    const double product_gap = (wide_plan.matrix - wide.mu * wide.nu.transpose()).cwiseAbs().maxCoeff();

    const std::vector<Vector> same = {vec({0.0}), vec({0.0}), vec({0.0})};
    const Vector uniform = Vector::Constant(3, 1.0 / 3.0);
    const auto flat = oracle::sinkhorn(oracle::make_problem(same, uniform, same, uniform, 1.0), 1e-12, 1000);
    const bool exact = flat.matrix == uniform * uniform.transpose();
    return {worst_violation < 1e-8 && product_gap < 1e-3 && exact,
            "violation " + fmt(worst_violation) + ", product gap " + fmt(product_gap) +
                (exact ? ", zero-cost plan exact" : ", zero-cost plan inexact")};
}

Verdict marginal_consistency() {
    std::string detail;
    bool pass = true;
    for (const auto& task : sbsteer::testing::gaussian_tasks()) {
        const auto s0 = gaussian_samples(task.mean0, 1.0, 2000, 10);
        const auto s1 = gaussian_samples(task.mean1, 1.0, 2000, 11);
        TrainConfig cfg;
        cfg.g_components = 1;
        const auto pot = fit(s0, s1, cfg).potential;
        const auto starts = gaussian_samples(task.mean0, 1.0, 2000, 12);
        const auto sde = kernels::sde_endpoints(pot, starts, 1.0, kValidationSdeSteps, 13);
        const auto fixed = kernels::conditional_samples(pot, starts, 14);
        const auto test = kernels::energy_permutation_test(sde, fixed, 199, 15);
        pass = pass && test.passes();
        detail += std::string(task.name) + ": E " + fmt(test.statistic) + " vs q95 " + fmt(test.null_q95) + "; ";
    }
    return {pass, detail};
}

Verdict drift_gradient() {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double h = 1e-5;
    int bad = 0, checked = 0;
    for (int k = 0; k < 100; ++k) {
        const int dim = 1 + k % 4;
        const auto pot = random_potential(dim, 1 + k % 3, 0.3 + unit(rng), 900 + static_cast<std::uint64_t>(k));
        Vector a(dim);
        for (int d = 0; d < dim; ++d)
            a[d] = normal(rng);
        const double t = 0.95 * unit(rng);
        const Vector g = drift(pot, a, t);
        for (int d = 0; d < dim; ++d) {
            Vector ap = a, am = a;
            ap[d] += h;
            am[d] -= h;
            const double fd =
                pot.epsilon() * (log_bridge_potential(pot, ap, t) - log_bridge_potential(pot, am, t)) / (2.0 * h);
            bad += !close_rel(g[d], fd, 1e-5, 1e-8);
            ++checked;
        }
    }
    return {bad == 0, std::to_string(checked - bad) + "/" + std::to_string(checked) + " coordinates agree"};
}

Verdict loss_gradient() {
    const double h = 1e-5;
    int bad = 0, checked = 0;
    for (int dim = 1; dim <= 4; ++dim) {
        for (int g = 1; g <= 3; ++g) {
            const double eps = 0.4 + 0.2 * g;
            const auto pot = random_potential(dim, g, eps, static_cast<std::uint64_t>(100 + 10 * dim + g));
            const auto b0 = gaussian_samples(Vector::Zero(dim), 1.0, 32, static_cast<std::uint64_t>(dim));
            const auto b1 = gaussian_samples(Vector::Constant(dim, 0.7), 0.8, 32, static_cast<std::uint64_t>(50 + g));
            const auto lg = loss_and_gradient(pot, b0, b1);
            const Vector p = pot.parameters();
            for (Eigen::Index k = 0; k < p.size(); ++k) {
                Vector pp = p, pm = p;
                pp[k] += h;
                pm[k] -= h;
                const double fd = (loss_terms(GaussianMixturePotential::from_parameters(eps, dim, pp), b0, b1).loss() -
                                   loss_terms(GaussianMixturePotential::from_parameters(eps, dim, pm), b0, b1).loss()) /
                                  (2.0 * h);
                bad += !close_rel(lg.gradient[k], fd, 1e-4, 1e-7);
                ++checked;
            }
        }
    }
    return {bad == 0, std::to_string(checked - bad) + "/" + std::to_string(checked) + " partials agree"};
}

struct ToyRun {
    ToyModelConfig cfg;
    ToyWeights weights;
    std::vector<ActivationRecord> records;
    HeadRanking ranking;
};

ToyRun toy_run(std::uint64_t seed) {
    ToyRun r{default_toy_config(seed), {}, {}, {}};
    r.weights = ToyWeights::random(r.cfg);
    r.records = kernels::generate_dataset(r.cfg, r.weights, kDefaultSamplesPerClass, derive_seed(seed, 1), 0);
    r.ranking = rank_heads_per_level(kernels::probe_all(r.records, derive_seed(seed, 2), 0), 5);
    return r;
}

Verdict head_recovery(ToyRun& first) {
    int exact = 0;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        ToyRun r = toy_run(seed);
        bool ok = true;
        for (Level level : {Level::image, Level::object}) {
            std::set<std::pair<int, int>> planted, chosen;
            for (const auto& p : r.cfg.plants(level))
                planted.insert({p.layer, p.head});
            for (const auto& k : r.ranking.selected)
                if (k.level == level)
                    chosen.insert({k.layer, k.head});
            ok = ok && planted == chosen;
        }
        exact += ok;
        detail += ok ? "+" : "-";
        if (seed == 0)
            first = std::move(r);
    }
    return {exact >= 9, std::to_string(exact) + "/10 seeds exact (" + detail + ")"};
}

Verdict flip_rate(const ToyRun& run) {
    const auto groups = group_records(run.records);
    std::vector<kernels::FitTask> tasks;
    for (const auto& key : run.ranking.selected) {
        kernels::FitTask task;
        for (const auto& rec : groups.at(key))
            (rec.label == Label::hallucinated ? task.samples0 : task.samples1).push_back(rec.vec);
        task.config.epsilon = 0.1;
        task.config.seed = derive_seed(3, static_cast<std::uint64_t>(key.layer * 16 + key.head * 2) +
                                              (key.level == Level::object));
        tasks.push_back(std::move(task));
    }
    const auto fits = kernels::fit_all(tasks);
    SteeringPlan plan;
    plan.mode = SteeringMode::static_mean;
    plan.strength_t = 1.0;
    for (std::size_t i = 0; i < fits.size(); ++i)
        plan.bridges.emplace(run.ranking.selected[i], fits[i].potential);
    SteeringPlan off = plan;
    off.strength_t = 0.0;
    const auto baseline = kernels::evaluate_flip_rate(run.cfg, run.weights, off, 2000, 4, 0);
    const auto steered = kernels::evaluate_flip_rate(run.cfg, run.weights, plan, 2000, 4, 0);
    const double delta = steered.rate - baseline.rate;
    const bool pinned = std::abs(delta - kPinnedFlipDelta) <= kFlipTolerance;
    return {steered.rate > baseline.rate && pinned, "baseline " + fmt(baseline.rate) + ", steered " +
                                                        fmt(steered.rate) + ", delta " + fmt(delta) + " (pinned " +
                                                        fmt(kPinnedFlipDelta) + ")"};
}

// Runs the binary with `args` from `dir`, discarding stdout. Returns the exit status.
int shell(const std::string& binary, const fs::path& dir, const std::string& args) {
    const std::string cmd = "cd '" + dir.string() + "' && '" + binary + "' " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Verdict cli_replay(const std::string& binary) {
    const fs::path dir = fs::temp_directory_path() / "sbsteer_acceptance_replay";
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_text_file((dir / "x.csv").string(), "x_1,x_2\n0,0\n1,0.5\n-1,0.2\n0.3,-0.7\n0.9,0.9\n-0.4,-1.1\n");
    write_text_file((dir / "y.csv").string(), "x_1,x_2\n3,0\n2.5,0.5\n3.4,-0.2\n2.8,1\n3.1,-0.9\n3.3,0.4\n");
    write_text_file((dir / "pts.csv").string(), "set,weight,x_1\nx,1,0\nx,1,1\ny,1,0.5\ny,2,2\n");
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"gen", "gen --n 40 --seed 2 --out gen"},
        {"probe", "probe --input gen/dataset.jsonl --top-h 2 --seed 2 --out probe"},
        {"train-bridge", "train-bridge --input gen/dataset.jsonl --ranking probe/ranking.csv --eps 0.1 --epochs 5 "
                         "--components 2 --out train"},
        {"train-bridge (paired)", "train-bridge --source x.csv --target y.csv --components 1 --epochs 5 "
                                  "--batch-size 4 --out pair"},
        {"steer-eval", "steer-eval --plan train/plan.json --toy-config gen/toy_config.json --trials 50 --mode "
                       "dynamic_sde --sde-steps 10 --out steer"},
        {"trace", "trace --bridge pair/bridge.json --starts x.csv --sde-steps 20 --seed 5 --out trace"},
        {"oracle sinkhorn", "oracle sinkhorn --points pts.csv --eps 0.5 --out sinkhorn"},
    };
    std::string failed;
    for (const auto& [name, args] : commands) {
        const std::string out = args.substr(args.rfind(' ') + 1);
        if (shell(binary, dir, args) != 0 ||
            shell(binary, dir, "replay --manifest " + out + "/manifest.json --out replay_" + out) != 0)
            failed += " " + name;
    }
    fs::remove_all(dir);
    return {failed.empty(), failed.empty() ? std::to_string(commands.size()) + " commands replay byte-identically"
                                           : "mismatch:" + failed};
}

Verdict zero_strength() {
    SteeringPlan plan;
    plan.strength_t = 0.0;
    plan.bridges.emplace(HeadKey{0, 0, Level::image}, random_potential(4, 3, 0.1, 1));
    plan.bridges.emplace(HeadKey{0, 0, Level::object}, random_potential(4, 2, 1.0, 2));
    int mismatches = 0;
    for (auto mode : {SteeringMode::static_mean, SteeringMode::static_sample, SteeringMode::dynamic_sde}) {
        plan.mode = mode;
        for (const auto& a0 : gaussian_samples(Vector::Zero(4), 10.0, 200, 3)) {
            const auto out = steer_activation(plan, 0, 0, a0, 17);
            mismatches += std::memcmp(out.data(), a0.data(), sizeof(double) * 4) != 0;
        }
    }
    return {mismatches == 0, std::to_string(600 - mismatches) + "/600 activations unchanged"};
}

} // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: %s <path-to-sbsteer-binary>\n", argv[0]);
        return 2;
    }
    const std::string binary = fs::absolute(argv[1]).string();
    ToyRun toy;
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"gaussian oracle agreement", gaussian_oracle},
        {"sinkhorn correctness", sinkhorn_correctness},
        {"static/dynamic marginal consistency", marginal_consistency},
        {"drift gradient check", drift_gradient},
        {"loss gradient check", loss_gradient},
        {"head recovery", [&] { return head_recovery(toy); }},
        {"flip-rate improvement", [&] { return flip_rate(toy); }},
        {"cli replay determinism", [&] { return cli_replay(binary); }},
        {"zero strength identity", zero_strength},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto start = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failures += !v.pass;
        std::printf("%s %zu %s: %s [%.1fs]\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                    v.detail.c_str(), secs);
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
