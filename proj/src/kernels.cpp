#include "sbsteer/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "sbsteer/sde.hpp"

namespace sbsteer::kernels {

int resolve_jobs(int jobs) {
#ifdef _OPENMP
    return jobs > 0 ? jobs : omp_get_max_threads();
#else
    (void)jobs;
    return 1;
#endif
}

namespace {

// Exceptions may not cross an OpenMP region; the first one is kept and rethrown.
class ErrorSlot {
public:
    template <class F>
    void run(F&& f) noexcept {
        try {
            f();
        } catch (...) {
#pragma omp critical(sbsteer_error_slot)
            if (!error_)
                error_ = std::current_exception();
        }
    }
    void rethrow() const {
        if (error_)
            std::rethrow_exception(error_);
    }

private:
    std::exception_ptr error_;
};

double ordered_sum(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs)
        s += x;
    return s;
}

} // namespace

std::vector<ActivationVector> sde_endpoints_serial(const GaussianMixturePotential& pot,
                                                   const std::vector<ActivationVector>& starts, double t_stop,
                                                   int n_steps, std::uint64_t seed) {
    std::vector<ActivationVector> out;
    out.reserve(starts.size());
    for (std::size_t i = 0; i < starts.size(); ++i)
        out.push_back(integrate(pot, starts[i], t_stop, n_steps, derive_seed(seed, i), false).endpoint());
    return out;
}

std::vector<ActivationVector> sde_endpoints(const GaussianMixturePotential& pot,
                                            const std::vector<ActivationVector>& starts, double t_stop, int n_steps,
                                            std::uint64_t seed, int jobs) {
    std::vector<ActivationVector> out(starts.size());
    const auto n = static_cast<std::ptrdiff_t>(starts.size());
    ErrorSlot err;
#pragma omp parallel for schedule(static) num_threads(resolve_jobs(jobs))
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        err.run([&] { out[k] = integrate(pot, starts[k], t_stop, n_steps, derive_seed(seed, k), false).endpoint(); });
    }
    err.rethrow();
    return out;
}

std::vector<ActivationVector> conditional_samples_serial(const GaussianMixturePotential& pot,
                                                         const std::vector<ActivationVector>& starts,
                                                         std::uint64_t seed) {
    std::vector<ActivationVector> out;
    out.reserve(starts.size());
    for (std::size_t i = 0; i < starts.size(); ++i) {
        std::mt19937_64 rng(derive_seed(seed, i));
        out.push_back(sample_conditional(condition(pot, starts[i]), rng));
    }
    return out;
}

std::vector<ActivationVector> conditional_samples(const GaussianMixturePotential& pot,
                                                  const std::vector<ActivationVector>& starts, std::uint64_t seed,
                                                  int jobs) {
    std::vector<ActivationVector> out(starts.size());
    const auto n = static_cast<std::ptrdiff_t>(starts.size());
    ErrorSlot err;
#pragma omp parallel for schedule(static) num_threads(resolve_jobs(jobs))
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        err.run([&] {
            std::mt19937_64 rng(derive_seed(seed, k));
            out[k] = sample_conditional(condition(pot, starts[k]), rng);
        });
    }
    err.rethrow();
    return out;
}

LossTerms loss_terms(const GaussianMixturePotential& pot, const std::vector<ActivationVector>& samples0,
                     const std::vector<ActivationVector>& samples1, int jobs) {
    require(!samples0.empty() && !samples1.empty(), "loss batches must be nonempty");
    std::vector<double> v0(samples0.size()), v1(samples1.size());
    const auto n0 = static_cast<std::ptrdiff_t>(samples0.size());
    const auto n1 = static_cast<std::ptrdiff_t>(samples1.size());
    ErrorSlot err;
#pragma omp parallel num_threads(resolve_jobs(jobs))
    {
#pragma omp for schedule(static) nowait
        for (std::ptrdiff_t i = 0; i < n0; ++i) {
            err.run([&] {
                detail::check_dim(pot, samples0[static_cast<std::size_t>(i)], "a0");
                v0[static_cast<std::size_t>(i)] =
                    detail::log_normalizer_with_grad(pot, samples0[static_cast<std::size_t>(i)], nullptr, 0.0);
            });
        }
#pragma omp for schedule(static)
        for (std::ptrdiff_t i = 0; i < n1; ++i) {
            err.run([&] {
                detail::check_dim(pot, samples1[static_cast<std::size_t>(i)], "a1");
                v1[static_cast<std::size_t>(i)] =
                    detail::log_potential_with_grad(pot, samples1[static_cast<std::size_t>(i)], nullptr, 0.0);
            });
        }
    }
    err.rethrow();
    LossTerms out;
    out.mean_log_normalizer = ordered_sum(v0) / static_cast<double>(v0.size());
    out.mean_log_potential = ordered_sum(v1) / static_cast<double>(v1.size());
    return out;
}

double energy_distance_serial(const std::vector<Vector>& xs, const std::vector<Vector>& ys) {
    require(!xs.empty() && !ys.empty(), "energy distance needs two nonempty samples");
    double xy = 0.0, xx = 0.0, yy = 0.0;
    for (const auto& x : xs)
        for (const auto& y : ys)
            xy += (x - y).norm();
    for (const auto& a : xs)
        for (const auto& b : xs)
            xx += (a - b).norm();
    for (const auto& a : ys)
        for (const auto& b : ys)
            yy += (a - b).norm();
    const double n = static_cast<double>(xs.size());
    const double m = static_cast<double>(ys.size());
    return 2.0 * xy / (n * m) - xx / (n * n) - yy / (m * m);
}

double energy_distance(const std::vector<Vector>& xs, const std::vector<Vector>& ys, int jobs) {
    require(!xs.empty() && !ys.empty(), "energy distance needs two nonempty samples");
    const auto n = static_cast<std::ptrdiff_t>(xs.size());
    const auto m = static_cast<std::ptrdiff_t>(ys.size());
    std::vector<double> row_xy(xs.size()), row_xx(xs.size()), row_yy(ys.size());
#pragma omp parallel num_threads(resolve_jobs(jobs))
    {
#pragma omp for schedule(static) nowait
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            double sxy = 0.0, sxx = 0.0;
            const auto& x = xs[static_cast<std::size_t>(i)];
            for (const auto& y : ys)
                sxy += (x - y).norm();
            for (const auto& b : xs)
                sxx += (x - b).norm();
            row_xy[static_cast<std::size_t>(i)] = sxy;
            row_xx[static_cast<std::size_t>(i)] = sxx;
        }
#pragma omp for schedule(static)
        for (std::ptrdiff_t j = 0; j < m; ++j) {
            double syy = 0.0;
            const auto& y = ys[static_cast<std::size_t>(j)];
            for (const auto& b : ys)
                syy += (y - b).norm();
            row_yy[static_cast<std::size_t>(j)] = syy;
        }
    }
    const double dn = static_cast<double>(n);
    const double dm = static_cast<double>(m);
    return 2.0 * ordered_sum(row_xy) / (dn * dm) - ordered_sum(row_xx) / (dn * dn) - ordered_sum(row_yy) / (dm * dm);
}

namespace {

struct PooledDistances {
    std::size_t n = 0;
    std::vector<double> condensed; // d(i, j) for i < j, row-major
    std::vector<std::size_t> row_offset;

    double at(std::size_t i, std::size_t j) const { return condensed[row_offset[i] + (j - i - 1)]; }
};

PooledDistances pool(const std::vector<Vector>& xs, const std::vector<Vector>& ys, int jobs) {
    PooledDistances d;
    d.n = xs.size() + ys.size();
    std::vector<const Vector*> z;
    z.reserve(d.n);
    for (const auto& x : xs)
        z.push_back(&x);
    for (const auto& y : ys)
        z.push_back(&y);
    d.row_offset.resize(d.n);
    std::size_t off = 0;
    for (std::size_t i = 0; i < d.n; ++i) {
        d.row_offset[i] = off;
        off += d.n - i - 1;
    }
    d.condensed.resize(off);
    const auto nn = static_cast<std::ptrdiff_t>(d.n);
#pragma omp parallel for schedule(dynamic, 32) num_threads(resolve_jobs(jobs))
    for (std::ptrdiff_t i = 0; i < nn; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        for (std::size_t j = ui + 1; j < d.n; ++j)
            d.condensed[d.row_offset[ui] + (j - ui - 1)] = (*z[ui] - *z[j]).norm();
    }
    return d;
}

// Energy statistic from within-group pair sums over unordered pairs.
double energy_from_sums(double total, double sxx, double syy, double n, double m) {
    const double sxy = total - sxx - syy;
    return 2.0 * sxy / (n * m) - 2.0 * sxx / (n * n) - 2.0 * syy / (m * m);
}

PermutationTest finish(double observed, std::vector<double> null) {
    PermutationTest out;
    out.statistic = observed;
    out.permutations = static_cast<int>(null.size());
    const auto exceed = std::count_if(null.begin(), null.end(), [&](double v) { return v >= observed; });
    out.p_value = (1.0 + static_cast<double>(exceed)) / (1.0 + static_cast<double>(null.size()));
    std::sort(null.begin(), null.end());
    const auto idx = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(null.size()))) - 1;
    out.null_q95 = null[std::min(idx, null.size() - 1)];
    return out;
}

std::vector<std::vector<char>> permutation_labels(std::size_t n, std::size_t m, int permutations, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<char> labels(n + m, 0);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n), 1);
    std::vector<std::vector<char>> out;
    out.reserve(static_cast<std::size_t>(permutations));
    for (int p = 0; p < permutations; ++p) {
        std::shuffle(labels.begin(), labels.end(), rng);
        out.push_back(labels);
    }
    return out;
}

} // namespace

PermutationTest energy_permutation_test_serial(const std::vector<Vector>& xs, const std::vector<Vector>& ys,
                                               int permutations, std::uint64_t seed) {
    require(!xs.empty() && !ys.empty(), "permutation test needs two nonempty samples");
    require(permutations >= 1, "need at least one permutation");
    const auto d = pool(xs, ys, 1);
    const std::size_t n = xs.size();
    const double dn = static_cast<double>(n);
    const double dm = static_cast<double>(ys.size());
    auto stat_for = [&](const std::vector<char>& is_x) {
        double total = 0.0, sxx = 0.0, syy = 0.0;
        for (std::size_t i = 0; i < d.n; ++i) {
            for (std::size_t j = i + 1; j < d.n; ++j) {
                const double v = d.at(i, j);
                total += v;
                if (is_x[i] && is_x[j])
                    sxx += v;
                else if (!is_x[i] && !is_x[j])
                    syy += v;
            }
        }
        return energy_from_sums(total, sxx, syy, dn, dm);
    };
    std::vector<char> identity(d.n, 0);
    std::fill(identity.begin(), identity.begin() + static_cast<std::ptrdiff_t>(n), 1);
    const double observed = stat_for(identity);
    std::vector<double> null;
    for (const auto& labels : permutation_labels(n, ys.size(), permutations, seed))
        null.push_back(stat_for(labels));
    return finish(observed, std::move(null));
}

PermutationTest energy_permutation_test(const std::vector<Vector>& xs, const std::vector<Vector>& ys,
                                        int permutations, std::uint64_t seed, int jobs) {
    require(!xs.empty() && !ys.empty(), "permutation test needs two nonempty samples");
    require(permutations >= 1, "need at least one permutation");
    const auto d = pool(xs, ys, jobs);
    const std::size_t n = xs.size();
    const double dn = static_cast<double>(n);
    const double dm = static_cast<double>(ys.size());
    const int threads = resolve_jobs(jobs);
    std::vector<double> row_total(d.n), row_xx(d.n), row_yy(d.n);

    auto stat_for = [&](const std::vector<char>& is_x) {
        const auto nn = static_cast<std::ptrdiff_t>(d.n);
#pragma omp parallel for schedule(dynamic, 32) num_threads(threads)
        for (std::ptrdiff_t ii = 0; ii < nn; ++ii) {
            const auto i = static_cast<std::size_t>(ii);
            double total = 0.0, sxx = 0.0, syy = 0.0;
            const double* row = d.condensed.data() + d.row_offset[i];
            for (std::size_t j = i + 1; j < d.n; ++j) {
                const double v = row[j - i - 1];
                total += v;
                if (is_x[i] && is_x[j])
                    sxx += v;
                else if (!is_x[i] && !is_x[j])
                    syy += v;
            }
            row_total[i] = total;
            row_xx[i] = sxx;
            row_yy[i] = syy;
        }
        return energy_from_sums(ordered_sum(row_total), ordered_sum(row_xx), ordered_sum(row_yy), dn, dm);
    };
    std::vector<char> identity(d.n, 0);
    std::fill(identity.begin(), identity.begin() + static_cast<std::ptrdiff_t>(n), 1);
    const double observed = stat_for(identity);
    std::vector<double> null;
    for (const auto& labels : permutation_labels(n, ys.size(), permutations, seed))
        null.push_back(stat_for(labels));
    return finish(observed, std::move(null));
}

std::vector<ProbeResult> probe_all(const std::vector<ActivationRecord>& records, std::uint64_t split_seed, int jobs,
                                   const ProbeOptions& opts) {
    const auto groups = group_records(records);
    std::vector<const std::pair<const HeadKey, std::vector<ActivationRecord>>*> items;
    for (const auto& g : groups)
        items.push_back(&g);
    std::vector<ProbeResult> out(items.size());
    const auto n = static_cast<std::ptrdiff_t>(items.size());
    ErrorSlot err;
#pragma omp parallel for schedule(dynamic, 1) num_threads(resolve_jobs(jobs))
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        err.run([&] { out[k] = fit_probe(items[k]->second, group_seed(split_seed, items[k]->first), opts); });
    }
    err.rethrow();
    return out;
}

std::vector<ActivationRecord> generate_dataset(const ToyModelConfig& cfg, const ToyWeights& weights,
                                               int n_per_class, std::uint64_t seed, int jobs) {
    require(n_per_class >= 1, "n_per_class must be >= 1");
    cfg.validate();
    const auto n = static_cast<std::ptrdiff_t>(2 * n_per_class);
    std::vector<std::vector<ActivationRecord>> parts(static_cast<std::size_t>(n));
    ErrorSlot err;
#pragma omp parallel for schedule(static) num_threads(resolve_jobs(jobs))
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const Level level = i < n_per_class ? Level::image : Level::object;
        const int idx = static_cast<int>(i % n_per_class);
        err.run([&] { parts[static_cast<std::size_t>(i)] = detail::dataset_item(cfg, weights, level, n_per_class, idx, seed); });
    }
    err.rethrow();
    std::vector<ActivationRecord> out;
    out.reserve(static_cast<std::size_t>(n) * parts.front().size());
    for (auto& p : parts)
        for (auto& r : p)
            out.push_back(std::move(r));
    return out;
}

FlipRate evaluate_flip_rate(const ToyModelConfig& cfg, const ToyWeights& weights, const SteeringPlan& plan,
                            int n_trials, std::uint64_t seed, int jobs) {
    require(n_trials >= 1, "n_trials must be >= 1");
    plan.validate();
    std::vector<char> agree(static_cast<std::size_t>(n_trials), 0);
    ErrorSlot err;
#pragma omp parallel for schedule(static) num_threads(resolve_jobs(jobs))
    for (int i = 0; i < n_trials; ++i)
        err.run([&] { agree[static_cast<std::size_t>(i)] = detail::flip_trial(cfg, weights, plan, i, seed); });
    err.rethrow();
    FlipRate out;
    out.trials = n_trials;
    out.agreeing = static_cast<int>(std::count(agree.begin(), agree.end(), 1));
    out.rate = static_cast<double>(out.agreeing) / static_cast<double>(n_trials);
    return out;
}

std::vector<FitResult> fit_all_serial(const std::vector<FitTask>& tasks) {
    std::vector<FitResult> out;
    out.reserve(tasks.size());
    for (const auto& t : tasks)
        out.push_back(fit(t.samples0, t.samples1, t.config));
    return out;
}

std::vector<FitResult> fit_all(const std::vector<FitTask>& tasks, int jobs) {
    std::vector<std::optional<FitResult>> slots(tasks.size());
    const auto n = static_cast<std::ptrdiff_t>(tasks.size());
    ErrorSlot err;
#pragma omp parallel for schedule(dynamic) num_threads(resolve_jobs(jobs))
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        err.run([&] { slots[k].emplace(fit(tasks[k].samples0, tasks[k].samples1, tasks[k].config)); });
    }
    err.rethrow();
    std::vector<FitResult> out;
    out.reserve(tasks.size());
    for (auto& s : slots)
        out.push_back(std::move(*s));
    return out;
}

} // namespace sbsteer::kernels
