#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "sbsteer/potential.hpp"
#include "sbsteer/records.hpp"
#include "sbsteer/sde.hpp"

namespace sbsteer {

enum class SteeringMode { static_mean, static_sample, dynamic_sde };

std::string_view to_string(SteeringMode mode);
SteeringMode parse_mode(std::string_view s);

struct SteeringPlan {
    std::map<HeadKey, GaussianMixturePotential> bridges;
    SteeringMode mode = SteeringMode::static_mean;
    double strength_t = 1.0;
    int sde_steps = kInferenceSdeSteps;
    std::uint64_t seed = 0;

    void validate() const;
    bool covers(int layer, int head) const;
};

/// Corrects one activation at (layer, head). Each available level is corrected
/// independently and the results averaged. An uncovered head is passed through
/// with a warning. strength_t = 0 returns a0 unchanged in every mode.
ActivationVector steer_activation(const SteeringPlan& plan, int layer, int head, const ActivationVector& a0);

/// Same, with an explicit seed for the stochastic modes.
ActivationVector steer_activation(const SteeringPlan& plan, int layer, int head, const ActivationVector& a0,
                                  std::uint64_t seed);

struct SteerItem {
    int layer = 0;
    int head = 0;
    ActivationVector vec;
};

/// Elementwise steer_activation; item i uses seed derive_seed(plan.seed, i).
std::vector<ActivationVector> steer_batch(const SteeringPlan& plan, const std::vector<SteerItem>& items);

// Plan manifest:
// {"mode":..., "strength_t":..., "sde_steps":..., "seed":..., "bridges":[{"layer":..,"head":..,"level":..,"path":"<bridge-json>"}]}
// Bridge paths are resolved relative to the manifest's directory.
struct PlanManifestEntry {
    HeadKey key;
    std::string path;
};

std::string plan_manifest_json(const SteeringPlan& plan, const std::vector<PlanManifestEntry>& entries);
SteeringPlan load_plan(const std::string& manifest_path);

} // namespace sbsteer
