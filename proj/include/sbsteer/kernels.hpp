#pragma once

// OpenMP kernels for the data-parallel loops of the pipeline. Each has a plain
// serial counterpart kept as the reference the tests compare against.
//
// Results never depend on the thread count: per-item work is seeded by item
// index, and reductions first fill one slot per item and then sum the slots in
// index order.

#include <cstdint>
#include <vector>

#include "sbsteer/potential.hpp"
#include "sbsteer/probe.hpp"
#include "sbsteer/toy_transformer.hpp"
#include "sbsteer/trainer.hpp"

namespace sbsteer::kernels {

/// jobs <= 0 selects the OpenMP default.
int resolve_jobs(int jobs);

// SDE endpoints from many starting points; path i uses seed derive_seed(seed, i).
std::vector<ActivationVector> sde_endpoints_serial(const GaussianMixturePotential& pot,
                                                   const std::vector<ActivationVector>& starts, double t_stop,
                                                   int n_steps, std::uint64_t seed);
std::vector<ActivationVector> sde_endpoints(const GaussianMixturePotential& pot,
                                            const std::vector<ActivationVector>& starts, double t_stop, int n_steps,
                                            std::uint64_t seed, int jobs = 0);

// One draw of pi(a1 | a0) per starting point, same seeding rule.
std::vector<ActivationVector> conditional_samples_serial(const GaussianMixturePotential& pot,
                                                         const std::vector<ActivationVector>& starts,
                                                         std::uint64_t seed);
std::vector<ActivationVector> conditional_samples(const GaussianMixturePotential& pot,
                                                  const std::vector<ActivationVector>& starts, std::uint64_t seed,
                                                  int jobs = 0);

// Full-data loss; the serial reference is sbsteer::loss_terms.
LossTerms loss_terms(const GaussianMixturePotential& pot, const std::vector<ActivationVector>& samples0,
                     const std::vector<ActivationVector>& samples1, int jobs);

// Energy distance 2 E|X-Y| - E|X-X'| - E|Y-Y'| (V-statistic).
double energy_distance_serial(const std::vector<Vector>& xs, const std::vector<Vector>& ys);
double energy_distance(const std::vector<Vector>& xs, const std::vector<Vector>& ys, int jobs = 0);

struct PermutationTest {
    double statistic = 0.0;
    double null_q95 = 0.0; // 95th percentile of the permutation null
    double p_value = 1.0;
    int permutations = 0;

    bool passes() const { return statistic < null_q95; }
};

PermutationTest energy_permutation_test_serial(const std::vector<Vector>& xs, const std::vector<Vector>& ys,
                                               int permutations, std::uint64_t seed);
PermutationTest energy_permutation_test(const std::vector<Vector>& xs, const std::vector<Vector>& ys,
                                        int permutations, std::uint64_t seed, int jobs = 0);

// Probe fits across head groups; serial reference is sbsteer::probe_all.
std::vector<ProbeResult> probe_all(const std::vector<ActivationRecord>& records, std::uint64_t split_seed,
                                   int jobs, const ProbeOptions& opts = {});

// Dataset generation across input sequences; serial reference is sbsteer::generate_dataset.
std::vector<ActivationRecord> generate_dataset(const ToyModelConfig& cfg, const ToyWeights& weights,
                                               int n_per_class, std::uint64_t seed, int jobs);

// Flip-rate trials; serial reference is sbsteer::evaluate_flip_rate.
FlipRate evaluate_flip_rate(const ToyModelConfig& cfg, const ToyWeights& weights, const SteeringPlan& plan,
                            int n_trials, std::uint64_t seed, int jobs);

// One bridge fit per task; task i trains on (samples0[i], samples1[i]) with configs[i].
struct FitTask {
    std::vector<ActivationVector> samples0;
    std::vector<ActivationVector> samples1;
    TrainConfig config;
};

std::vector<FitResult> fit_all_serial(const std::vector<FitTask>& tasks);
std::vector<FitResult> fit_all(const std::vector<FitTask>& tasks, int jobs = 0);

} // namespace sbsteer::kernels
