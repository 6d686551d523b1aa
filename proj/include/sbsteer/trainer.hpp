#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sbsteer/potential.hpp"

namespace sbsteer {

enum class InitStrategy { data_kmeans, random_sphere };

std::string_view to_string(InitStrategy s);
InitStrategy parse_init_strategy(std::string_view s);

struct TrainConfig {
    int epochs = 200;
    int batch_size = 128;
    double learning_rate = 1e-2;
    double final_learning_rate = 1e-4; // cosine decay target
    double momentum = 0.9;
    double clip_norm = 10.0;
    std::uint64_t seed = 0;
    int g_components = 10;
    double epsilon = 1.0;
    InitStrategy init_strategy = InitStrategy::data_kmeans;

    void validate() const;
};

struct TrainReport {
    std::vector<double> loss_curve; // full-data loss after each epoch
    double final_loss = 0.0;
    double wall_time = 0.0; // seconds
    long iterations = 0;
};

/// Scale diagonals are clamped to this range at initialization.
inline constexpr double kMinInitScale = 1e-3;
inline constexpr double kMaxInitScale = 1e3;

GaussianMixturePotential init_potential(const std::vector<ActivationVector>& samples0,
                                        const std::vector<ActivationVector>& samples1, const TrainConfig& cfg,
                                        std::uint64_t rng_seed);

struct FitResult {
    GaussianMixturePotential potential;
    TrainReport report;
};

/// Mini-batch SGD with momentum on E[log c(a0)] - E[log v(a1)] over unpaired samples.
FitResult fit(const std::vector<ActivationVector>& samples0, const std::vector<ActivationVector>& samples1,
              const TrainConfig& cfg);

/// Report JSON without wall time, so that reruns are byte-identical.
std::string report_to_json(const TrainReport& report);
std::string loss_curve_csv(const TrainReport& report);

} // namespace sbsteer
