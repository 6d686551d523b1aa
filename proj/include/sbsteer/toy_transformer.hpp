#pragma once

// Minimal residual attention model used to exercise the steering pipeline at desk scale:
//     x(k) = x(k-1) + sum_m T_m(x(k-1)) Theta_m
// with random fixed weights, no normalization, and a linear readout of the final token.
// Hallucination is simulated by adding a fixed shift to the final-token output of
// chosen ("planted") heads before their output projection.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sbsteer/records.hpp"
#include "sbsteer/steering.hpp"

namespace sbsteer {

struct PlantedHead {
    int layer = 0;
    int head = 0;
    Vector shift; // head_dim entries
};

struct ToyModelConfig {
    int layers = 4;
    int heads_per_layer = 8;
    int dim = 64;
    int vocab = 32;
    int seq_len = 8;
    std::uint64_t seed = 0;
    std::vector<PlantedHead> image_plants;
    std::vector<PlantedHead> object_plants;

    int head_dim() const { return dim / heads_per_layer; }
    const std::vector<PlantedHead>& plants(Level level) const {
        return level == Level::image ? image_plants : object_plants;
    }
    void validate() const;
};

/// K=4, M=8, D=64, V=32 with five planted heads per level on disjoint head sets;
/// object-level shifts are smaller than image-level ones.
ToyModelConfig default_toy_config(std::uint64_t seed = 0);

std::string toy_config_to_json(const ToyModelConfig& cfg);
ToyModelConfig toy_config_from_json(const std::string& text);

struct HeadWeights {
    Matrix query; // dim x head_dim
    Matrix key;
    Matrix value;
    Matrix output; // head_dim x dim (Theta_m)
};

struct ToyWeights {
    Matrix embedding; // vocab x dim
    std::vector<std::vector<HeadWeights>> heads; // [layer][head]
    Matrix unembedding; // dim x vocab

    static ToyWeights random(const ToyModelConfig& cfg);
    static ToyWeights zeros(const ToyModelConfig& cfg);
};

struct TokenDistribution {
    Vector logits;
    Vector probs;

    int argmax() const;
};

enum class ForwardMode { clean, hallucinated };

/// May rewrite a head's final-token activation before its output projection.
using HeadHook = std::function<void(int layer, int head, ActivationVector& activation)>;

struct ForwardResult {
    TokenDistribution distribution;
    std::vector<ActivationRecord> records; // one per (layer, head), final token
};

/// In hallucinated mode the plants of `level` are applied; with no level, the plants of
/// both levels are applied at once and records are tagged image-level.
ForwardResult forward(const ToyModelConfig& cfg, const ToyWeights& weights, const std::vector<int>& tokens,
                      ForwardMode mode, std::optional<Level> level = Level::image, const HeadHook& hook = {});

/// Random token sequence for sample `index` of a run seeded with `seed`.
std::vector<int> random_sequence(const ToyModelConfig& cfg, std::uint64_t seed, std::uint64_t index);

inline constexpr int kDefaultSamplesPerClass = 750;

/// For each level, n_per_class sequences run in clean and hallucinated mode;
/// 2 * K * M records per sequence and level.
std::vector<ActivationRecord> generate_dataset(const ToyModelConfig& cfg, const ToyWeights& weights,
                                               int n_per_class, std::uint64_t seed);

struct FlipRate {
    double rate = 0.0;
    int agreeing = 0;
    int trials = 0;
};

/// Fraction of hallucinated forwards (steered by `plan`) whose argmax token matches the clean forward.
/// Trials hallucinate at both levels' planted heads.
FlipRate evaluate_flip_rate(const ToyModelConfig& cfg, const ToyWeights& weights, const SteeringPlan& plan,
                            int n_trials, std::uint64_t seed);

namespace detail {

// Records of both modes for sequence i of one level.
std::vector<ActivationRecord> dataset_item(const ToyModelConfig& cfg, const ToyWeights& weights, Level level,
                                           int n_per_class, int i, std::uint64_t seed);

// True when steered trial i agrees with its clean forward.
bool flip_trial(const ToyModelConfig& cfg, const ToyWeights& weights, const SteeringPlan& plan, int i,
                std::uint64_t seed);

} // namespace detail

} // namespace sbsteer
